//! Post-hoc OOD scores on a (possibly masked) classifier.
//!
//! Raw energy is lower for ID samples. Everything handed to the metric layer
//! goes through [`Scorer::oriented`], which negates energy so that a larger
//! value always means "more ID".

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::masking::LayerMask;
use crate::nn::{argmax, Classifier};
use crate::numerics::{logsumexp_unchecked, softmax_unchecked, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Msp,
    Odin,
    Mahalanobis,
    Energy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Msp => "msp",
            Method::Odin => "odin",
            Method::Mahalanobis => "mahalanobis",
            Method::Energy => "energy",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "msp" => Method::Msp,
            "odin" => Method::Odin,
            "mahalanobis" => Method::Mahalanobis,
            "energy" => Method::Energy,
            _ => return Err(Error::Config(format!("unknown scoring method {s:?}"))),
        })
    }
}

/// Which activation the Mahalanobis score inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayer {
    /// Last hidden activation.
    Penultimate,
    Logits,
    /// 1-based hidden layer index.
    Hidden(usize),
}

impl FeatureLayer {
    fn index(self, model: &Classifier) -> Result<usize> {
        let l = model.layer_count();
        match self {
            FeatureLayer::Logits => Ok(l),
            FeatureLayer::Penultimate if l >= 2 => Ok(l - 1),
            FeatureLayer::Penultimate => Err(Error::arg("model has no hidden layer")),
            FeatureLayer::Hidden(h) if h >= 1 && h <= l => Ok(h),
            FeatureLayer::Hidden(h) => Err(Error::arg(format!("no hidden layer {h}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `1e-6 · trace(Σ̂) / d`.
    Auto,
    Fixed(f64),
}

pub const ODIN_TEMPERATURE: f64 = 1.0e4;
pub const ODIN_EPSILON: f64 = 1.4e-3;
pub const ENERGY_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub method: Method,
    pub temperature: f64,
    pub epsilon: f64,
    pub ridge: Ridge,
    pub feature_layer: FeatureLayer,
}

impl ScoreConfig {
    pub fn new(method: Method) -> Self {
        let temperature = match method {
            Method::Odin => ODIN_TEMPERATURE,
            _ => ENERGY_TEMPERATURE,
        };
        Self {
            method,
            temperature,
            epsilon: if method == Method::Odin { ODIN_EPSILON } else { 0.0 },
            ridge: Ridge::Auto,
            feature_layer: FeatureLayer::Penultimate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::arg("temperature must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::arg("perturbation must be non-negative"));
        }
        if let Ridge::Fixed(r) = self.ridge {
            if !(r >= 0.0) {
                return Err(Error::arg("ridge must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match self.method {
            Method::Msp => "msp".into(),
            Method::Energy => format!("energy(T={}, oriented=-S_energy)", self.temperature),
            Method::Odin => format!("odin(T={}, eps={})", self.temperature, self.epsilon),
            Method::Mahalanobis => format!("mahalanobis(layer={:?}, ridge={:?})", self.feature_layer, self.ridge),
        }
    }
}

fn check(model: &Classifier, x: &[f64], mask: Option<&LayerMask>) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::arg("input dimension does not match model"));
    }
    if let Some(m) = mask {
        m.check_shape(model)?;
    }
    Ok(())
}

fn max_softmax(logits: &[f64]) -> f64 {
    softmax_unchecked(logits).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum softmax probability.
pub fn score_msp(model: &Classifier, x: &[f64], mask: Option<&LayerMask>) -> Result<f64> {
    check(model, x, mask)?;
    Ok(max_softmax(&model.logits_unchecked(x, mask)))
}

/// `−T · logsumexp(f(x) / T)` of a logit vector.
pub fn energy_of_logits(logits: &[f64], t: f64) -> f64 {
    if t == 1.0 {
        -logsumexp_unchecked(logits)
    } else {
        let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
        -t * logsumexp_unchecked(&scaled)
    }
}

/// Raw energy score (lower ⇒ more ID).
pub fn score_energy(model: &Classifier, x: &[f64], t: f64, mask: Option<&LayerMask>) -> Result<f64> {
    check(model, x, mask)?;
    if !(t > 0.0) {
        return Err(Error::arg("temperature must be positive"));
    }
    Ok(energy_of_logits(&model.logits_unchecked(x, mask), t))
}

/// `∇_x log max_c softmax(f(x)/T)_c`, by reverse mode.
pub fn odin_input_grad(model: &Classifier, x: &[f64], t: f64, mask: Option<&LayerMask>) -> Result<Vec<f64>> {
    check(model, x, mask)?;
    Ok(odin_grad_unchecked(model, x, t, mask))
}

fn odin_grad_unchecked(model: &Classifier, x: &[f64], t: f64, mask: Option<&LayerMask>) -> Vec<f64> {
    let trace = model.trace(x, mask);
    let scaled: Vec<f64> = trace.logits().iter().map(|v| v / t).collect();
    let c = argmax(&scaled);
    let p = softmax_unchecked(&scaled);
    // ∂/∂z [z_c/T − lse(z/T)] = (e_c − p) / T
    let d: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| ((if k == c { 1.0 } else { 0.0 }) - pk) / t)
        .collect();
    let mut scratch = vec![0.0; model.params().len()];
    model.backward(&trace, &d, mask, &mut scratch)
}

/// ODIN: perturb `x̃ = x − ε·sign(−∇_x log S_T(x))`, return `max softmax(f(x̃)/T)`.
pub fn score_odin(model: &Classifier, x: &[f64], t: f64, eps: f64, mask: Option<&LayerMask>) -> Result<f64> {
    check(model, x, mask)?;
    if !(t > 0.0) || !(eps >= 0.0) {
        return Err(Error::arg("ODIN needs T > 0 and eps >= 0"));
    }
    let perturbed: Vec<f64> = if eps == 0.0 {
        x.to_vec()
    } else {
        let g = odin_grad_unchecked(model, x, t, mask);
        x.iter()
            .zip(&g)
            .map(|(&xi, &gi)| {
                let s = if -gi > 0.0 {
                    1.0
                } else if -gi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                xi - eps * s
            })
            .collect()
    };
    let logits = model.logits_unchecked(&perturbed, mask);
    let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
    Ok(max_softmax(&scaled))
}

/// Class means and tied precision of one feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    pub means: Vec<Vec<f64>>,
    /// Tied covariance before the ridge.
    pub covariance: Matrix,
    pub ridge: f64,
    pub precision: Matrix,
    pub layer: FeatureLayer,
}

/// Fits class means and the tied covariance `Σ_c Σ_{i∈c} (f_i − μ_c)(f_i − μ_c)ᵀ / N`
/// from ID training features, then inverts `Σ̂ + ridge·I`.
pub fn fit_mahalanobis(
    model: &Classifier,
    id_train: &LabeledSet,
    layer: FeatureLayer,
    ridge: Ridge,
    mask: Option<&LayerMask>,
) -> Result<MahalanobisModel> {
    let li = layer.index(model)?;
    let c = model.class_count();
    if !id_train.is_labeled() || id_train.dim() != model.input_dim() {
        return Err(Error::arg("Mahalanobis fit needs labeled ID data matching the model"));
    }
    let mut counts = vec![0usize; c];
    for &y in id_train.labels() {
        counts[y as usize] += 1;
    }
    if let Some(k) = counts.iter().position(|&n| n < 2) {
        return Err(Error::arg(format!("class {k} has fewer than 2 samples")));
    }
    let feats: Vec<Vec<f64>> = (0..id_train.len())
        .map(|i| model.features(id_train.x(i), li, mask))
        .collect::<Result<_>>()?;
    let d = feats[0].len();
    let mut means = vec![vec![0.0; d]; c];
    for (f, &y) in feats.iter().zip(id_train.labels()) {
        for (m, v) in means[y as usize].iter_mut().zip(f) {
            *m += v;
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (f, &y) in feats.iter().zip(id_train.labels()) {
        let mu = &means[y as usize];
        for j in 0..d {
            centered[j] = f[j] - mu[j];
        }
        let data = cov.as_mut_slice();
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in 0..d {
                data[a * d + b] += ca * centered[b];
            }
        }
    }
    let n = id_train.len() as f64;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    let ridge = match ridge {
        Ridge::Fixed(r) => r,
        Ridge::Auto => 1e-6 * (0..d).map(|i| cov.get(i, i)).sum::<f64>() / d as f64,
    };
    let mut reg = cov.clone();
    for i in 0..d {
        reg.set(i, i, reg.get(i, i) + ridge);
    }
    let precision = reg.inverse_spd().map_err(|e| {
        Error::Numeric(format!(
            "tied covariance is singular after ridge {ridge:e} ({e}); use a larger ridge"
        ))
    })?;
    Ok(MahalanobisModel {
        means,
        covariance: cov,
        ridge,
        precision,
        layer,
    })
}

impl MahalanobisModel {
    /// `max_c −(f − μ_c)ᵀ P (f − μ_c)` for a feature vector.
    pub fn score_features(&self, f: &[f64]) -> f64 {
        let d = f.len();
        let mut best = f64::NEG_INFINITY;
        let mut diff = vec![0.0; d];
        for mu in &self.means {
            for j in 0..d {
                diff[j] = f[j] - mu[j];
            }
            let mut q = 0.0;
            for a in 0..d {
                let pa = self.precision.row(a);
                let mut s = 0.0;
                for b in 0..d {
                    s += pa[b] * diff[b];
                }
                q += diff[a] * s;
            }
            best = best.max(-q);
        }
        best
    }
}

pub fn score_mahalanobis(
    mahal: &MahalanobisModel,
    model: &Classifier,
    x: &[f64],
    mask: Option<&LayerMask>,
) -> Result<f64> {
    let li = mahal.layer.index(model)?;
    let f = model.features(x, li, mask)?;
    if f.len() != mahal.precision.rows() {
        return Err(Error::arg("Mahalanobis model was fitted on another feature layer"));
    }
    Ok(mahal.score_features(&f))
}

/// `f(x)_y − max_{j≠y} f(x)_j`.
pub fn margin(logits: &[f64], y: usize) -> Result<f64> {
    if logits.len() < 2 || y >= logits.len() {
        return Err(Error::arg("margin needs C >= 2 and y < C"));
    }
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[y] - other)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Id,
    Ood,
}

/// ID iff `score >= λ`.
pub fn decide(score: f64, lambda: f64) -> Decision {
    if score >= lambda {
        Decision::Id
    } else {
        Decision::Ood
    }
}

/// A scoring method bound to a model, ready to score batches with
/// "larger ⇒ ID" orientation.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    model: &'a Classifier,
    mask: Option<&'a LayerMask>,
    config: ScoreConfig,
    mahal: Option<MahalanobisModel>,
}

impl<'a> Scorer<'a> {
    /// `fit_data` is required for Mahalanobis and ignored otherwise.
    pub fn new(
        model: &'a Classifier,
        mask: Option<&'a LayerMask>,
        config: ScoreConfig,
        fit_data: Option<&LabeledSet>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(m) = mask {
            m.check_shape(model)?;
        }
        let mahal = match config.method {
            Method::Mahalanobis => {
                let data = fit_data.ok_or_else(|| Error::arg("Mahalanobis needs ID training data"))?;
                Some(fit_mahalanobis(model, data, config.feature_layer, config.ridge, mask)?)
            }
            _ => None,
        };
        Ok(Self {
            model,
            mask,
            config,
            mahal,
        })
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.config
    }

    /// Score in the method's own convention (raw energy for `Energy`).
    pub fn raw(&self, x: &[f64]) -> Result<f64> {
        let c = &self.config;
        match c.method {
            Method::Msp => score_msp(self.model, x, self.mask),
            Method::Energy => score_energy(self.model, x, c.temperature, self.mask),
            Method::Odin => score_odin(self.model, x, c.temperature, c.epsilon, self.mask),
            Method::Mahalanobis => score_mahalanobis(self.mahal.as_ref().unwrap(), self.model, x, self.mask),
        }
    }

    /// Score with larger ⇒ more ID.
    pub fn oriented(&self, x: &[f64]) -> Result<f64> {
        let v = self.raw(x)?;
        Ok(if self.config.method == Method::Energy { -v } else { v })
    }

    pub fn oriented_batch(&self, data: &LabeledSet) -> Result<Vec<f64>> {
        (0..data.len()).map(|i| self.oriented(data.x(i))).collect()
    }
}
