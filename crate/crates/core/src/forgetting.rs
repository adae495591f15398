//! Forgetting-objective fine-tuning (UM) and its mask-learning variant
//! (UMAP), both driven by the objective `|ℓ − ĉ| + ĉ`.

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::masking::{gaussian_scores, ForgettingConstraint, LayerMask};
use crate::nn::{ce_effective_grads, sgd_epochs, Checkpoint, Classifier, Schedule, Sgd, TrainConfig};
use crate::numerics::RandomStream;
use crate::record::{hash_str, EpochRow, RunRecord};

/// Value of `|ℓ − ĉ| + ĉ` and the sign that multiplies `∇ℓ`.
///
/// The subgradient at the kink `ℓ = ĉ` is taken as 0.
pub fn um_objective(loss: f64, constraint: f64) -> (f64, f64) {
    let diff = loss - constraint;
    let scale = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    (diff.abs() + constraint, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmConfig {
    /// Frozen constraint `ĉ`.
    pub constraint: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl UmConfig {
    pub fn from_constraint(c: &ForgettingConstraint, base: &TrainConfig, epochs: usize) -> Self {
        Self {
            constraint: c.value,
            epochs,
            lr: base.lr,
            momentum: base.momentum,
            weight_decay: base.weight_decay,
            batch_size: base.batch_size,
            seed: base.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.constraint >= 0.0 && self.constraint.is_finite()) {
            return Err(Error::arg("forgetting constraint must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("UM needs at least one epoch"));
        }
        self.train_config().validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: Schedule::Constant,
            seed: self.seed,
        }
    }
}

/// Minibatch SGD on `|ℓ − ĉ| + ĉ`: descent on `ℓ` above the constraint,
/// ascent below it.
pub fn um_finetune(model: &mut Classifier, data: &LabeledSet, config: &UmConfig) -> Result<(Vec<Checkpoint>, RunRecord)> {
    config.validate()?;
    if !data.is_labeled() {
        return Err(Error::arg("UM needs labeled ID data"));
    }
    let c = config.constraint;
    let hash = hash_str(&format!("{config:?}"));
    sgd_epochs(model, data, &config.train_config(), "um", &hash, &mut |m, idx, _| {
        let (loss, mut grads) = ce_effective_grads(m, data, idx, None);
        let (obj, scale) = um_objective(loss, c);
        grads.iter_mut().for_each(|g| *g *= scale);
        Ok((loss, obj, grads))
    })
}

/// Learnable per-weight scores; the active mask drops the lowest fraction `prune`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopupScores {
    pub scores: Vec<Vec<f64>>,
    pub shapes: Vec<(usize, usize)>,
    pub prune: f64,
}

impl PopupScores {
    pub fn init(model: &Classifier, prune: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&prune) {
            return Err(Error::arg(format!("prune fraction {prune} outside [0, 1)")));
        }
        let mut rng = RandomStream::new(seed);
        Ok(Self {
            scores: gaussian_scores(model, &mut rng),
            shapes: model.dims().windows(2).map(|w| (w[1], w[0])).collect(),
            prune,
        })
    }
}

/// Per layer, retains the top `round((1 − p)·n_l)` scores.
pub fn umap_mask(scores: &PopupScores) -> Result<LayerMask> {
    if !(0.0..1.0).contains(&scores.prune) {
        return Err(Error::arg(format!("prune fraction {} outside [0, 1)", scores.prune)));
    }
    LayerMask::from_scores(scores.shapes.clone(), scores.scores.clone(), 1.0 - scores.prune)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmapConfig {
    pub constraint: f64,
    pub prune: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl UmapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.constraint >= 0.0 && self.constraint.is_finite()) {
            return Err(Error::arg("forgetting constraint must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.prune) {
            return Err(Error::arg("prune fraction must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("UMAP needs epochs >= 1 and batch size >= 1"));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("invalid UMAP optimizer settings"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct UmapResult {
    pub scores: PopupScores,
    pub mask: LayerMask,
    /// Active mask at the end of every epoch.
    pub epoch_masks: Vec<LayerMask>,
    pub record: RunRecord,
}

/// Straight-through score gradient for one minibatch:
/// `∂L/∂ŝ_w = scale · ∂ℓ/∂(w ⊙ m) · w`.
pub fn umap_score_grads(model: &Classifier, effective_grads: &[f64], scale: f64) -> Vec<Vec<f64>> {
    (0..model.layer_count())
        .map(|l| {
            let o = model.weight_offset(l);
            let g = &effective_grads[o..o + model.weight_count(l)];
            g.iter().zip(model.weights(l)).map(|(&gi, &w)| scale * gi * w).collect()
        })
        .collect()
}

/// Learns popup scores for a frozen model. The model is only read.
pub fn umap_train(model: &Classifier, data: &LabeledSet, config: &UmapConfig) -> Result<UmapResult> {
    config.validate()?;
    if data.is_empty() || !data.is_labeled() {
        return Err(Error::arg("UMAP needs labeled ID data"));
    }
    let root = RandomStream::new(config.seed);
    let mut scores = PopupScores::init(model, config.prune, root.child(0x5343_4f52).seed())?;
    let mut shuffle = root.child(0x5348_5546);
    let n_scores: usize = scores.scores.iter().map(Vec::len).sum();
    let mut opt = Sgd::new(n_scores, config.momentum, config.weight_decay);
    let mut flat = vec![0.0; n_scores];
    let hash = hash_str(&format!("{config:?}"));
    let mut record = RunRecord::new("umap", config.seed, &hash);
    let mut epoch_masks = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = shuffle.permutation(data.len());
        let (mut loss_sum, mut obj_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mask = umap_mask(&scores)?;
            let (loss, eff) = ce_effective_grads(model, data, batch, Some(&mask));
            if !loss.is_finite() {
                return Err(Error::Training { epoch: epoch + 1, loss });
            }
            let (obj, scale) = um_objective(loss, config.constraint);
            let grads: Vec<f64> = umap_score_grads(model, &eff, scale).concat();
            let mut at = 0;
            for layer in &scores.scores {
                flat[at..at + layer.len()].copy_from_slice(layer);
                at += layer.len();
            }
            opt.step(&mut flat, &grads, config.lr);
            let mut at = 0;
            for layer in scores.scores.iter_mut() {
                let n = layer.len();
                layer.copy_from_slice(&flat[at..at + n]);
                at += n;
            }
            loss_sum += loss * batch.len() as f64;
            obj_sum += obj * batch.len() as f64;
        }
        let mask = umap_mask(&scores)?;
        let mut row = EpochRow::new(epoch + 1);
        row.train_loss = loss_sum / data.len() as f64;
        row.objective = obj_sum / data.len() as f64;
        row.train_acc = crate::metrics::labeled_accuracy(model, data, Some(&mask));
        record.rows.push(row);
        epoch_masks.push(mask);
    }
    let mask = umap_mask(&scores)?;
    Ok(UmapResult {
        scores,
        mask,
        epoch_masks,
        record,
    })
}
