//! Labeled sample sets, synthetic generators and the dataset CSV format.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{per_sample_ce, Checkpoint};
use crate::numerics::{Matrix, RandomStream};
use crate::record::fmt_f64;

/// Label carried by unlabeled OOD and auxiliary samples.
pub const UNLABELED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    IdTrain,
    IdTest,
    OodTest,
    Aux,
    AtypicalMarked,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Matrix,
    labels: Vec<i64>,
    classes: usize,
    pub provenance: Provenance,
}

impl LabeledSet {
    /// Labels must lie in `[0, classes)` or equal [`UNLABELED`].
    pub fn new(features: Matrix, labels: Vec<i64>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::arg(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels
            .iter()
            .find(|&&y| y != UNLABELED && (y < 0 || y >= classes as i64))
        {
            return Err(Error::arg(format!("label {y} outside [0, {classes})")));
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance: Provenance::Unknown,
        })
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    #[inline]
    pub fn label(&self, i: usize) -> i64 {
        self.labels[i]
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.iter().all(|&y| y != UNLABELED)
    }

    /// Concatenates two sets of equal dimension and class count.
    pub fn concat(&self, other: &LabeledSet) -> Result<LabeledSet> {
        if self.dim() != other.dim() || self.classes != other.classes {
            return Err(Error::arg("cannot concatenate sets of different shape"));
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledSet {
            features: Matrix::new(self.len() + other.len(), self.dim(), data)?,
            labels,
            classes: self.classes,
            provenance: self.provenance,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# umood-dataset v1, d={}, C={}\n", self.dim(), self.classes);
        for i in 0..self.len() {
            for v in self.x(i) {
                s.push_str(&fmt_f64(*v));
                s.push(',');
            }
            let _ = writeln!(s, "{}", self.labels[i]);
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn load_csv(path: &Path) -> Result<LabeledSet> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing {
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    parse_csv(&text, path)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<LabeledSet> {
    let perr = |row: usize, col: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        col,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, 0, "empty file".into()))?;
    let rest = header
        .strip_prefix("# umood-dataset v1,")
        .ok_or_else(|| perr(1, 0, "missing `# umood-dataset v1` header".into()))?;
    let (mut d, mut c) = (None, None);
    for part in rest.split(',') {
        let part = part.trim();
        if let Some(v) = part.strip_prefix("d=") {
            d = v.parse::<usize>().ok();
        } else if let Some(v) = part.strip_prefix("C=") {
            c = v.parse::<usize>().ok();
        }
    }
    let d = d.ok_or_else(|| perr(1, 0, "header lacks d=<dims>".into()))?;
    let c = c.ok_or_else(|| perr(1, 0, "header lacks C=<classes>".into()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines {
        let row = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != d + 1 {
            return Err(perr(
                row,
                cols.len(),
                format!("expected {} columns, found {}", d + 1, cols.len()),
            ));
        }
        for (j, t) in cols[..d].iter().enumerate() {
            let v: f64 = t
                .trim()
                .parse()
                .map_err(|_| perr(row, j + 1, format!("not a number: {t:?}")))?;
            if !v.is_finite() {
                return Err(perr(row, j + 1, "non-finite feature".into()));
            }
            data.push(v);
        }
        let y: i64 = cols[d]
            .trim()
            .parse()
            .map_err(|_| perr(row, d + 1, format!("bad label {:?}", cols[d])))?;
        if y != UNLABELED && (y < 0 || y >= c as i64) {
            return Err(Error::LabelRange {
                path: path.to_path_buf(),
                row,
                label: y,
                classes: c,
            });
        }
        labels.push(y);
    }
    let n = labels.len();
    LabeledSet::new(Matrix::new(n, d, data)?, labels, c)
}

/// Draws `counts[k]` points from `N(means[k], σ² I)` labeled `k`.
pub fn gen_gmm(means: &[Vec<f64>], sigma: f64, counts: &[usize], seed: u64) -> Result<LabeledSet> {
    if means.is_empty() || means.len() != counts.len() {
        return Err(Error::arg("need one count per mean"));
    }
    let d = means[0].len();
    if means.iter().any(|m| m.len() != d) {
        return Err(Error::arg("means of different dimension"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::arg("sigma must be non-negative"));
    }
    let mut rng = RandomStream::new(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, (m, &n)) in means.iter().zip(counts).enumerate() {
        for _ in 0..n {
            for &mu in m {
                data.push(rng.normal(mu, sigma));
            }
            labels.push(k as i64);
        }
    }
    let n = labels.len();
    LabeledSet::new(Matrix::new(n, d, data)?, labels, means.len())
}

/// Desk benchmark with planted atypical samples.
///
/// Class means sit on an arc of radius `r_id` around the upward direction,
/// `class_gap_deg` apart. Each class plants a small tight cluster at radius
/// `r_atyp` on the opposite side, where the OOD clusters live; neighbouring
/// atypical clusters are only `atyp_sep_deg` apart and overlap, so the
/// network memorizes them late in training. OOD clusters sit at `r_ood`,
/// `ood_spread_deg` apart; auxiliary outliers use the same directions on a
/// farther shell `r_aux`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtypicalBenchmarkSpec {
    pub dims: usize,
    pub classes: usize,
    pub r_id: f64,
    pub sigma_id: f64,
    pub class_gap_deg: f64,
    pub per_class: usize,
    pub rho: f64,
    pub r_atyp: f64,
    pub sigma_atyp: f64,
    pub atyp_sep_deg: f64,
    pub r_ood: f64,
    pub sigma_ood: f64,
    pub ood_spread_deg: f64,
    pub ood_count: usize,
    pub test_per_class: usize,
    pub aux_count: usize,
    pub r_aux: f64,
    pub sigma_aux: f64,
    pub seed: u64,
}

impl Default for AtypicalBenchmarkSpec {
    fn default() -> Self {
        Self {
            dims: 2,
            classes: 3,
            r_id: 4.0,
            sigma_id: 0.5,
            class_gap_deg: 60.0,
            per_class: 500,
            rho: 0.05,
            r_atyp: 7.0,
            sigma_atyp: 0.3,
            atyp_sep_deg: 5.0,
            r_ood: 10.0,
            sigma_ood: 1.0,
            ood_spread_deg: 40.0,
            ood_count: 600,
            test_per_class: 200,
            aux_count: 600,
            r_aux: 14.0,
            sigma_aux: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub id_train: LabeledSet,
    pub id_test: LabeledSet,
    pub ood_test: LabeledSet,
    pub aux: LabeledSet,
    /// Indices into `id_train` of the planted atypical points.
    pub planted: Vec<usize>,
}

const UP: f64 = PI / 2.0;
const DOWN: f64 = UP + PI;

impl AtypicalBenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_id < self.r_atyp && self.r_atyp < self.r_ood) {
            return Err(Error::arg("benchmark needs r_id < r_atyp < r_ood"));
        }
        if !(self.rho >= 0.0 && self.rho < 0.5) {
            return Err(Error::arg("atypical fraction must lie in [0, 0.5)"));
        }
        if self.dims < 2 || self.classes < 2 {
            return Err(Error::arg("benchmark needs d >= 2 and K >= 2"));
        }
        if self.per_class == 0 || self.test_per_class == 0 || self.ood_count == 0 {
            return Err(Error::arg("empty benchmark split"));
        }
        let finite = [self.class_gap_deg, self.atyp_sep_deg, self.ood_spread_deg, self.r_aux];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("benchmark geometry must be finite"));
        }
        Ok(())
    }

    /// Offset of slot `i` from the centre of a fan of `classes` slots.
    fn fan(&self, i: usize) -> f64 {
        i as f64 - (self.classes as f64 - 1.0) / 2.0
    }

    fn point(&self, radius: f64, angle: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        v[0] = radius * angle.cos();
        v[1] = radius * angle.sin();
        v
    }

    pub fn class_mean(&self, k: usize) -> Vec<f64> {
        self.point(self.r_id, UP + self.fan(k) * self.class_gap_deg.to_radians())
    }

    pub fn atypical_center(&self, k: usize) -> Vec<f64> {
        self.point(self.r_atyp, DOWN + self.fan(k) * self.atyp_sep_deg.to_radians())
    }

    fn shell(&self, radius: f64) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|j| self.point(radius, DOWN + self.fan(j) * self.ood_spread_deg.to_radians()))
            .collect()
    }

    pub fn ood_centers(&self) -> Vec<Vec<f64>> {
        self.shell(self.r_ood)
    }

    pub fn aux_centers(&self) -> Vec<Vec<f64>> {
        self.shell(self.r_aux)
    }
}

fn draw_around(rng: &mut RandomStream, center: &[f64], sigma: f64, out: &mut Vec<f64>) {
    for &c in center {
        out.push(rng.normal(c, sigma));
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Train, test and OOD samples come from one stream in that order; the
/// auxiliary set has its own child stream so its size never shifts the rest.
pub fn gen_atypical_benchmark(spec: &AtypicalBenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let ood = spec.ood_centers();
    let aux = spec.aux_centers();
    let scale = spec.sigma_ood.max(spec.sigma_aux);
    for o in &ood {
        for a in &aux {
            if dist(o, a) < 2.0 * scale {
                return Err(Error::arg("auxiliary clusters overlap OOD test clusters"));
            }
        }
    }

    let d = spec.dims;
    let k = spec.classes;
    let mut rng = RandomStream::new(spec.seed);

    let n_atyp = (spec.rho * spec.per_class as f64).round() as usize;
    let mut data = Vec::with_capacity(k * spec.per_class * d);
    let mut labels = Vec::with_capacity(k * spec.per_class);
    let mut planted = Vec::new();
    for c in 0..k {
        let mean = spec.class_mean(c);
        let atyp = spec.atypical_center(c);
        for i in 0..spec.per_class {
            if i < n_atyp {
                planted.push(labels.len());
                draw_around(&mut rng, &atyp, spec.sigma_atyp, &mut data);
            } else {
                draw_around(&mut rng, &mean, spec.sigma_id, &mut data);
            }
            labels.push(c as i64);
        }
    }
    let n = labels.len();
    let id_train = LabeledSet::new(Matrix::new(n, d, data)?, labels, k)?.with_provenance(Provenance::IdTrain);

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        let mean = spec.class_mean(c);
        for _ in 0..spec.test_per_class {
            draw_around(&mut rng, &mean, spec.sigma_id, &mut data);
            labels.push(c as i64);
        }
    }
    let n = labels.len();
    let id_test = LabeledSet::new(Matrix::new(n, d, data)?, labels, k)?.with_provenance(Provenance::IdTest);

    let clustered = |rng: &mut RandomStream, centers: &[Vec<f64>], sigma: f64, count: usize, p: Provenance| -> Result<LabeledSet> {
        let mut data = Vec::with_capacity(count * d);
        for i in 0..count {
            draw_around(rng, &centers[i % centers.len()], sigma, &mut data);
        }
        Ok(LabeledSet::new(Matrix::new(count, d, data)?, vec![UNLABELED; count], k)?.with_provenance(p))
    };
    let ood_test = clustered(&mut rng, &ood, spec.sigma_ood, spec.ood_count, Provenance::OodTest)?;
    let mut aux_rng = RandomStream::new(spec.seed).child(4);
    let aux = clustered(&mut aux_rng, &aux, spec.sigma_aux, spec.aux_count, Provenance::Aux)?;

    Ok(Benchmark {
        id_train,
        id_test,
        ood_test,
        aux,
        planted,
    })
}

#[derive(Debug, Clone)]
pub struct AtypicalSplit {
    pub typical: LabeledSet,
    pub atypical: LabeledSet,
    pub typical_idx: Vec<usize>,
    pub atypical_idx: Vec<usize>,
    /// Accuracy of the selecting checkpoint on each set.
    pub typical_acc: f64,
    pub atypical_acc: f64,
}

/// Ranks samples by CE loss under `checkpoint`: the `selection` highest-loss
/// samples form the atypical set, the `selection` lowest the typical set.
/// Ties in loss are broken by sample index.
pub fn atypical_split(checkpoint: &Checkpoint, data: &LabeledSet, selection: usize) -> Result<AtypicalSplit> {
    if 2 * selection > data.len() {
        return Err(Error::arg("selection size exceeds half the data"));
    }
    let model = checkpoint.model()?;
    if !data.is_labeled() {
        return Err(Error::arg("atypical split needs labeled data"));
    }
    let losses = per_sample_ce(&model, data, None);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let typical_idx: Vec<usize> = order[..selection].to_vec();
    let atypical_idx: Vec<usize> = order[order.len() - selection..].iter().rev().copied().collect();
    let typical = data.subset(&typical_idx);
    let atypical = data.subset(&atypical_idx).with_provenance(Provenance::AtypicalMarked);
    let acc = |s: &LabeledSet| {
        if s.is_empty() {
            f64::NAN
        } else {
            crate::metrics::labeled_accuracy(&model, s, None)
        }
    };
    Ok(AtypicalSplit {
        typical_acc: acc(&typical),
        atypical_acc: acc(&atypical),
        typical,
        atypical,
        typical_idx,
        atypical_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Classifier;

    #[test]
    fn gmm_zero_sigma_and_determinism() {
        let means = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let s = gen_gmm(&means, 0.0, &[3, 2], 1).unwrap();
        for i in 0..5 {
            let k = s.label(i) as usize;
            assert_eq!(s.x(i), &means[k][..]);
        }
        let a = gen_gmm(&means, 1.0, &[10, 10], 7).unwrap();
        let b = gen_gmm(&means, 1.0, &[10, 10], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gmm_empirical_mean() {
        let n = 100_000;
        let s = gen_gmm(&[vec![1.5, -2.0, 0.0]], 2.0, &[n], 3).unwrap();
        for j in 0..3 {
            let m: f64 = (0..n).map(|i| s.x(i)[j]).sum::<f64>() / n as f64;
            let truth = [1.5, -2.0, 0.0][j];
            assert!((m - truth).abs() < 4.0 * 2.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "# umood-dataset v1, d=2, C=3\n0.5,1.25,2\n-1,3,-1\n").unwrap();
        let s = load_csv(&p).unwrap();
        assert_eq!(s.x(0), &[0.5, 1.25]);
        assert_eq!(s.x(1), &[-1.0, 3.0]);
        assert_eq!(s.labels(), &[2, -1]);

        let g = gen_gmm(&[vec![0.1, 0.2], vec![3.0, 1.0 / 3.0]], 0.7, &[4, 5], 2).unwrap();
        g.save_csv(&p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), g);

        std::fs::write(&p, "# umood-dataset v1, d=2, C=3\n0.5,1.25,2\n1,2\n").unwrap();
        match load_csv(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "# umood-dataset v1, d=2, C=3\n0.5,1.25,3\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::LabelRange { .. })));
        std::fs::write(&p, "# umood-dataset v1, d=2, C=3\n0.5,x,1\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Parse { col: 2, .. })));
        assert!(matches!(load_csv(&dir.path().join("nope.csv")), Err(Error::Missing { .. })));
    }

    #[test]
    fn benchmark_shapes_and_planted_points() {
        let spec = AtypicalBenchmarkSpec::default();
        let b = gen_atypical_benchmark(&spec).unwrap();
        assert_eq!(b.id_train.len(), 1500);
        assert_eq!(b.planted.len(), 75);
        assert_eq!(b.id_test.len(), 600);
        assert!(b.ood_test.labels().iter().all(|&y| y == UNLABELED));
        let clean = AtypicalBenchmarkSpec {
            rho: 0.0,
            ..spec.clone()
        };
        assert!(gen_atypical_benchmark(&clean).unwrap().planted.is_empty());
        let bad = AtypicalBenchmarkSpec { r_atyp: 11.0, ..spec.clone() };
        assert!(gen_atypical_benchmark(&bad).is_err());
        let crowded = AtypicalBenchmarkSpec { r_aux: 11.0, ..spec.clone() };
        assert!(gen_atypical_benchmark(&crowded).is_err());
        let exact = AtypicalBenchmarkSpec {
            sigma_atyp: 0.0,
            ..spec
        };
        let b = gen_atypical_benchmark(&exact).unwrap();
        for &i in &b.planted {
            let c = b.id_train.label(i) as usize;
            assert_eq!(b.id_train.x(i), &exact.atypical_center(c)[..]);
        }
    }

    #[test]
    fn split_partitions_and_orders() {
        let spec = AtypicalBenchmarkSpec {
            per_class: 20,
            ..Default::default()
        };
        let b = gen_atypical_benchmark(&spec).unwrap();
        let mut rs = RandomStream::new(0);
        let m = Classifier::init(vec![2, 8, 3], &mut rs).unwrap();
        let ck = Checkpoint::of(&m, 0, 0, "");
        let half = b.id_train.len() / 2;
        let s = atypical_split(&ck, &b.id_train, half).unwrap();
        let mut all: Vec<usize> = s.typical_idx.iter().chain(&s.atypical_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..b.id_train.len()).collect::<Vec<_>>());
        assert!(atypical_split(&ck, &b.id_train, half + 1).is_err());
    }
}
