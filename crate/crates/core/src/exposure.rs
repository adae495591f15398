//! Outlier-exposure objectives and fine-tuning with auxiliary outliers.

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{ce_effective_grads, sgd_epochs, Checkpoint, Classifier, TrainConfig};
use crate::numerics::{logsumexp_unchecked, softmax_unchecked, RandomStream};
use crate::record::{hash_str, RunRecord};
use crate::scoring::energy_of_logits;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureMethod {
    /// Cross-entropy to the uniform distribution on outliers.
    Oe,
    /// Squared-hinge energy bounds added to CE.
    EnergyBound,
}

impl std::str::FromStr for ExposureMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oe" => Ok(ExposureMethod::Oe),
            "energy-bound" => Ok(ExposureMethod::EnergyBound),
            _ => Err(Error::Config(format!("unknown exposure method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureConfig {
    pub method: ExposureMethod,
    pub lambda: f64,
    pub m_in: f64,
    pub m_out: f64,
    pub aux_batch_size: usize,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            method: ExposureMethod::Oe,
            lambda: 0.5,
            m_in: -25.0,
            m_out: -7.0,
            aux_batch_size: 256,
        }
    }
}

/// `logsumexp(z) − mean(z)`; equals `ln C` at constant logits and exceeds it otherwise.
pub fn oe_loss(logits: &[f64]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::arg("OE loss needs at least 2 classes"));
    }
    Ok(oe_loss_unchecked(logits))
}

fn oe_loss_unchecked(z: &[f64]) -> f64 {
    logsumexp_unchecked(z) - z.iter().sum::<f64>() / z.len() as f64
}

/// `∂ oe_loss / ∂z = softmax(z) − 1/C`.
pub fn oe_loss_grad(logits: &[f64]) -> Vec<f64> {
    let u = 1.0 / logits.len() as f64;
    softmax_unchecked(logits).into_iter().map(|p| p - u).collect()
}

/// `E_in[max(0, E − m_in)²] + E_out[max(0, m_out − E)²]`; an empty side contributes 0.
pub fn energy_bound_loss(id_energies: &[f64], ood_energies: &[f64], m_in: f64, m_out: f64) -> Result<f64> {
    if id_energies.iter().chain(ood_energies).any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite energy"));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|&e| f(e)).sum::<f64>() / v.len() as f64
        }
    };
    let inn = mean(id_energies, &|e| (e - m_in).max(0.0).powi(2));
    let out = mean(ood_energies, &|e| (m_out - e).max(0.0).powi(2));
    Ok(inn + out)
}

/// Loss and gradient of the combined objective over one ID batch and one
/// aux batch, with respect to the flat parameters.
pub fn combined_loss_and_grads(
    model: &Classifier,
    id: &LabeledSet,
    id_idx: &[usize],
    aux: &LabeledSet,
    aux_idx: &[usize],
    cfg: &ExposureConfig,
) -> (f64, f64, Vec<f64>) {
    let (ce, mut grads) = ce_effective_grads(model, id, id_idx, None);
    let lambda = cfg.lambda;
    let mut extra = 0.0;
    match cfg.method {
        ExposureMethod::Oe => {
            let s = lambda / aux_idx.len() as f64;
            for &i in aux_idx {
                let trace = model.trace(aux.x(i), None);
                let z = trace.logits();
                extra += oe_loss_unchecked(z) / aux_idx.len() as f64;
                let d: Vec<f64> = oe_loss_grad(z).into_iter().map(|g| g * s).collect();
                model.backward(&trace, &d, None, &mut grads);
            }
        }
        ExposureMethod::EnergyBound => {
            // E = −lse(z), ∂E/∂z = −softmax(z).
            let s_in = lambda / id_idx.len() as f64;
            for &i in id_idx {
                let trace = model.trace(id.x(i), None);
                let z = trace.logits();
                let h = (energy_of_logits(z, 1.0) - cfg.m_in).max(0.0);
                extra += h * h / id_idx.len() as f64;
                if h > 0.0 {
                    let d: Vec<f64> = softmax_unchecked(z).into_iter().map(|p| -2.0 * h * p * s_in).collect();
                    model.backward(&trace, &d, None, &mut grads);
                }
            }
            let s_out = lambda / aux_idx.len() as f64;
            for &i in aux_idx {
                let trace = model.trace(aux.x(i), None);
                let z = trace.logits();
                let h = (cfg.m_out - energy_of_logits(z, 1.0)).max(0.0);
                extra += h * h / aux_idx.len() as f64;
                if h > 0.0 {
                    let d: Vec<f64> = softmax_unchecked(z).into_iter().map(|p| 2.0 * h * p * s_out).collect();
                    model.backward(&trace, &d, None, &mut grads);
                }
            }
        }
    }
    (ce, ce + lambda * extra, grads)
}

/// `k` distinct indices from `0..n` (partial Fisher–Yates).
fn sample_indices(rng: &mut RandomStream, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below(n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Minibatch SGD on CE(ID) plus `λ` times the exposure term on aux outliers.
/// Each step draws its aux batch independently from a dedicated stream.
pub fn finetune_with_outliers(
    model: &mut Classifier,
    id: &LabeledSet,
    aux: &LabeledSet,
    exposure: &ExposureConfig,
    train: &TrainConfig,
) -> Result<(Vec<Checkpoint>, RunRecord)> {
    if aux.is_empty() {
        return Err(Error::arg("auxiliary outlier set is empty"));
    }
    if aux.dim() != model.input_dim() || id.dim() != model.input_dim() {
        return Err(Error::arg("data dimension does not match model"));
    }
    if !id.is_labeled() {
        return Err(Error::arg("ID data must be labeled"));
    }
    if !(exposure.lambda >= 0.0) || exposure.aux_batch_size == 0 {
        return Err(Error::arg("invalid exposure settings"));
    }
    let hash = hash_str(&format!("{exposure:?}{train:?}"));
    sgd_epochs(model, id, train, "oe", &hash, &mut |m, idx, rng| {
        let aux_idx = sample_indices(rng, aux.len(), exposure.aux_batch_size);
        Ok(combined_loss_and_grads(m, id, idx, aux, &aux_idx, exposure))
    })
}
