//! Random layer-wise weight masks, the forgetting-constraint estimate and
//! the mask-ratio probe sweep.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::metrics::labeled_accuracy;
use crate::nn::{argmax, mean_ce_loss, Classifier};
use crate::numerics::RandomStream;
use crate::record::fmt_f64;

/// Per-layer binary retention pattern over weight matrices, plus the scores
/// that generated it (empty when the mask was built by hand or loaded).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMask {
    layers: Vec<Vec<bool>>,
    shapes: Vec<(usize, usize)>,
    scores: Vec<Vec<f64>>,
    keep: Vec<f64>,
}

fn shapes_of(model: &Classifier) -> Vec<(usize, usize)> {
    model.dims().windows(2).map(|w| (w[1], w[0])).collect()
}

/// Number of weights kept out of `n` for retained fraction `keep`.
pub fn retained_count(n: usize, keep: f64) -> usize {
    ((keep * n as f64).round() as usize).min(n)
}

/// Keeps the `k` highest scores; equal scores favour the lower index.
fn top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = vec![false; scores.len()];
    for &i in &order[..k] {
        keep[i] = true;
    }
    keep
}

impl LayerMask {
    pub fn full(model: &Classifier) -> Self {
        let shapes = shapes_of(model);
        Self {
            layers: shapes.iter().map(|&(r, c)| vec![true; r * c]).collect(),
            scores: Vec::new(),
            keep: vec![1.0; shapes.len()],
            shapes,
        }
    }

    pub fn empty(model: &Classifier) -> Self {
        let shapes = shapes_of(model);
        Self {
            layers: shapes.iter().map(|&(r, c)| vec![false; r * c]).collect(),
            scores: Vec::new(),
            keep: vec![0.0; shapes.len()],
            shapes,
        }
    }

    /// Per layer, retains the top `round(keep·n_l)` scores.
    pub fn from_scores(shapes: Vec<(usize, usize)>, scores: Vec<Vec<f64>>, keep: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&keep) {
            return Err(Error::arg(format!("keep fraction {keep} outside [0, 1]")));
        }
        if shapes.len() != scores.len() || shapes.iter().zip(&scores).any(|(&(r, c), s)| r * c != s.len()) {
            return Err(Error::arg("scores do not match layer shapes"));
        }
        let layers = scores.iter().map(|s| top_k(s, retained_count(s.len(), keep))).collect();
        Ok(Self {
            layers,
            keep: vec![keep; shapes.len()],
            shapes,
            scores,
        })
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Vec<bool>] {
        &mut self.layers
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn keep_fractions(&self) -> &[f64] {
        &self.keep
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn retained(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.iter().filter(|&&b| b).count()).collect()
    }

    pub fn is_full(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|&b| b))
    }

    pub fn check_shape(&self, model: &Classifier) -> Result<()> {
        if self.shapes != shapes_of(model) {
            return Err(Error::arg(format!(
                "mask shapes {:?} do not match model {:?}",
                self.shapes,
                model.dims()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MASK_MAGIC} {}", self.layers.len());
        for (r, c) in &self.shapes {
            let _ = write!(header, " {r}x{c}");
        }
        header.push('\n');
        let mut out = header.into_bytes();
        for layer in &self.layers {
            for chunk in layer.chunks(8) {
                let mut byte = 0u8;
                for (bit, &b) in chunk.iter().enumerate() {
                    if b {
                        byte |= 1 << bit;
                    }
                }
                out.push(byte);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let pb = path.to_path_buf();
        if !bytes.starts_with(MASK_MAGIC.as_bytes()) {
            return Err(Error::BadMagic {
                path: pb,
                expected: MASK_MAGIC,
            });
        }
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Truncated {
            path: pb.clone(),
            detail: "header line not terminated".into(),
        })?;
        let header = String::from_utf8_lossy(&bytes[..nl]);
        let bad = |detail: String| Error::DimensionMismatch {
            path: pb.clone(),
            detail,
        };
        let mut tok = header.split_ascii_whitespace().skip(1);
        let n: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing layer count".into()))?;
        let mut shapes: Vec<(usize, usize)> = Vec::with_capacity(n);
        for t in tok {
            let (r, c) = t.split_once('x').ok_or_else(|| bad(format!("bad shape {t:?}")))?;
            let r = r.parse().map_err(|_| bad(format!("bad shape {t:?}")))?;
            let c = c.parse().map_err(|_| bad(format!("bad shape {t:?}")))?;
            shapes.push((r, c));
        }
        if shapes.len() != n {
            return Err(bad(format!("header declares {n} layers but lists {}", shapes.len())));
        }
        let body = &bytes[nl + 1..];
        let need: usize = shapes.iter().map(|&(r, c)| (r * c).div_ceil(8)).sum();
        if body.len() < need {
            return Err(Error::Truncated {
                path: pb,
                detail: format!("expected {need} mask bytes, found {}", body.len()),
            });
        }
        if body.len() > need {
            return Err(bad(format!("{} trailing bytes", body.len() - need)));
        }
        let mut layers = Vec::with_capacity(n);
        let mut at = 0;
        for &(r, c) in &shapes {
            let len = r * c;
            let nbytes = len.div_ceil(8);
            let chunk = &body[at..at + nbytes];
            layers.push((0..len).map(|i| chunk[i / 8] >> (i % 8) & 1 == 1).collect::<Vec<bool>>());
            at += nbytes;
        }
        let keep = layers
            .iter()
            .map(|l: &Vec<bool>| l.iter().filter(|&&b| b).count() as f64 / l.len().max(1) as f64)
            .collect();
        Ok(Self {
            layers,
            shapes,
            scores: Vec::new(),
            keep,
        })
    }
}

pub const MASK_MAGIC: &str = "UMMASK1";

pub fn save_mask(mask: &LayerMask, path: &Path) -> Result<()> {
    std::fs::write(path, mask.to_bytes())?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<LayerMask> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing {
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    LayerMask::from_bytes(&bytes, path)
}

/// Standard-normal score per weight, shaped like the model's weight matrices.
pub fn gaussian_scores(model: &Classifier, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    model
        .weight_counts()
        .into_iter()
        .map(|n| (0..n).map(|_| rng.gaussian()).collect())
        .collect()
}

/// Random mask retaining the top `round(delta_keep·n_l)` of per-weight
/// standard-normal scores in every layer.
pub fn gen_mask(model: &Classifier, delta_keep: f64, seed: u64) -> Result<LayerMask> {
    let mut rng = RandomStream::new(seed);
    let scores = gaussian_scores(model, &mut rng);
    LayerMask::from_scores(shapes_of(model), scores, delta_keep)
}

/// Mean CE loss of the masked, frozen model over a fixed ID set.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingConstraint {
    pub value: f64,
    pub delta: f64,
    pub dataset_size: usize,
    pub seed: u64,
    /// The mask used for the estimate.
    pub mask: LayerMask,
}

pub fn estimate_constraint(model: &Classifier, mask: &LayerMask, data: &LabeledSet) -> Result<ForgettingConstraint> {
    estimate_constraint_seeded(model, mask, data, 0)
}

pub(crate) fn estimate_constraint_seeded(
    model: &Classifier,
    mask: &LayerMask,
    data: &LabeledSet,
    seed: u64,
) -> Result<ForgettingConstraint> {
    if data.is_empty() {
        return Err(Error::arg("constraint estimate needs data"));
    }
    let value = mean_ce_loss(model, data, Some(mask))?;
    let delta = mask.keep_fractions().first().copied().unwrap_or(1.0);
    Ok(ForgettingConstraint {
        value,
        delta,
        dataset_size: data.len(),
        seed,
        mask: mask.clone(),
    })
}

/// Draws a fresh random mask with `delta_keep` and estimates the constraint.
pub fn constraint_for(model: &Classifier, delta_keep: f64, data: &LabeledSet, seed: u64) -> Result<ForgettingConstraint> {
    let mask = gen_mask(model, delta_keep, seed)?;
    estimate_constraint_seeded(model, &mask, data, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub delta: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub misclassified: Vec<usize>,
}

/// Seed of the mask used for grid value `delta` under sweep seed `seed`.
pub fn probe_mask_seed(seed: u64, delta: f64) -> u64 {
    RandomStream::new(seed).child_seed(delta.to_bits())
}

pub fn probe_sweep(model: &Classifier, grid: &[f64], data: &LabeledSet, seed: u64) -> Result<Vec<ProbeReport>> {
    if let Some(d) = grid.iter().find(|&&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::arg(format!("mask ratio {d} outside (0, 1]")));
    }
    grid.iter()
        .map(|&delta| {
            let mask = gen_mask(model, delta, probe_mask_seed(seed, delta))?;
            let loss = mean_ce_loss(model, data, Some(&mask))?;
            let misclassified: Vec<usize> = (0..data.len())
                .filter(|&i| argmax(&model.logits_unchecked(data.x(i), Some(&mask))) as i64 != data.label(i))
                .collect();
            Ok(ProbeReport {
                delta,
                loss,
                accuracy: labeled_accuracy(model, data, Some(&mask)),
                misclassified,
            })
        })
        .collect()
}

pub fn probe_csv(reports: &[ProbeReport]) -> String {
    let mut s = String::from("delta,loss,accuracy,n_misclassified\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(r.delta),
            fmt_f64(r.loss),
            fmt_f64(r.accuracy),
            r.misclassified.len()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn injected_scores_keep_top_half() {
        let m = LayerMask::from_scores(vec![(2, 2)], vec![vec![0.1, 0.9, 0.5, 0.7]], 0.5).unwrap();
        assert_eq!(m.layers()[0], vec![false, true, false, true]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let m = LayerMask::from_scores(vec![(1, 4)], vec![vec![1.0, 1.0, 1.0, 1.0]], 0.5).unwrap();
        assert_eq!(m.layers()[0], vec![true, true, false, false]);
    }

    #[test]
    fn retained_counts() {
        let mut rs = RandomStream::new(2);
        let model = Classifier::init(vec![10, 100, 7], &mut rs).unwrap();
        assert!(gen_mask(&model, 1.0, 3).unwrap().is_full());
        let m = gen_mask(&model, 0.975, 3).unwrap();
        assert_eq!(m.retained(), vec![975, 683]);
        assert!(gen_mask(&model, 1.5, 3).is_err());
        assert_eq!(gen_mask(&model, 0.3, 9).unwrap(), gen_mask(&model, 0.3, 9).unwrap());
    }

    #[test]
    fn mask_file_round_trip() {
        let mut rs = RandomStream::new(4);
        let model = Classifier::init(vec![2, 5, 3], &mut rs).unwrap();
        let m = gen_mask(&model, 0.6, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask");
        save_mask(&m, &p).unwrap();
        let back = load_mask(&p).unwrap();
        assert_eq!(back.layers(), m.layers());
        assert_eq!(back.shapes(), m.shapes());
        let mut bytes = m.to_bytes();
        bytes.pop();
        assert!(matches!(LayerMask::from_bytes(&bytes, &p), Err(Error::Truncated { .. })));
        assert!(matches!(LayerMask::from_bytes(b"XXMASK1 1 2x2\n\x0f", &p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn hand_computed_constraint() {
        // W1 = I, b1 = 0; W2 = [[1, 0], [0, 1]], b2 = 0. Mask drops W2[0][0].
        let eye = Matrix::identity(2);
        let model = Classifier::from_layers(vec![(eye.clone(), vec![0.0, 0.0]), (eye, vec![0.0, 0.0])]).unwrap();
        let mut mask = LayerMask::full(&model);
        mask.layers_mut()[1][0] = false;
        let data = LabeledSet::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(), vec![0, 1], 2)
            .unwrap();
        // Sample 1: logits [0, 0] -> ln 2. Sample 2: logits [0, 2] -> ln(1 + e^-2).
        let want = 0.5 * (2f64.ln() + (1.0 + (-2f64).exp()).ln());
        let c = estimate_constraint(&model, &mask, &data).unwrap();
        assert!((c.value - want).abs() < 1e-15);

        let full = estimate_constraint(&model, &LayerMask::full(&model), &data).unwrap();
        assert_eq!(full.value, mean_ce_loss(&model, &data, None).unwrap());
        let empty = LabeledSet::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        assert!(estimate_constraint(&model, &mask, &empty).is_err());
    }
}
