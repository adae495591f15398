//! Experiment orchestration: data and model setup, per-epoch evaluation,
//! and the pipelines behind each CLI command. File output lives in
//! [`commands`].

pub mod commands;
pub mod config;
pub mod svg;

pub use config::{DataSource, ExperimentConfig};

use crate::data::{atypical_split, gen_atypical_benchmark, load_csv, LabeledSet};
use crate::error::{Error, Result};
use crate::exposure::finetune_with_outliers;
use crate::forgetting::{um_finetune, umap_train, UmConfig, UmapConfig, UmapResult};
use crate::masking::{constraint_for, LayerMask};
use crate::metrics::{aupr, auroc, fpr95, id_acc, masked_accuracy, ScoredSet};
use crate::nn::{train, Checkpoint, Classifier, Schedule, TrainConfig};
use crate::numerics::{normal_cdf, RandomStream};
use crate::record::{MethodMetrics, RunRecord};
use crate::scoring::Scorer;
use crate::theory::{empirical_fpr, spearman, sweep_margin, GmmTheorySpec, SweepRow};

/// The model for run seed `s` is initialized from stream `s + INIT_SEED_OFFSET`,
/// keeping it apart from the data stream seeded with `s`.
pub const INIT_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub ood: LabeledSet,
    pub aux: Option<LabeledSet>,
    /// Planted atypical indices into `train` (empty for file data).
    pub planted: Vec<usize>,
}

pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<Datasets> {
    match &cfg.data {
        DataSource::Benchmark(spec) => {
            let b = gen_atypical_benchmark(&crate::data::AtypicalBenchmarkSpec { seed, ..spec.clone() })?;
            Ok(Datasets {
                train: b.id_train,
                test: b.id_test,
                ood: b.ood_test,
                aux: Some(b.aux),
                planted: b.planted,
            })
        }
        DataSource::Files { train, test, ood, aux } => {
            let d = Datasets {
                train: load_csv(train)?,
                test: load_csv(test)?,
                ood: load_csv(ood)?,
                aux: aux.as_deref().map(load_csv).transpose()?,
                planted: Vec::new(),
            };
            for (set, path) in [(&d.train, train), (&d.test, test)] {
                if !set.is_labeled() {
                    return Err(Error::Parse {
                        path: path.clone(),
                        row: 0,
                        col: 0,
                        detail: "ID data must be fully labeled".into(),
                    });
                }
            }
            let others = [(&d.test, test), (&d.ood, ood)].into_iter().chain(d.aux.as_ref().zip(aux.as_ref()));
            for (set, path) in others {
                if set.dim() != d.train.dim() || set.classes() != d.train.classes() {
                    return Err(Error::DimensionMismatch {
                        path: path.clone(),
                        detail: format!(
                            "d={} C={} but training data has d={} C={}",
                            set.dim(),
                            set.classes(),
                            d.train.dim(),
                            d.train.classes()
                        ),
                    });
                }
            }
            Ok(d)
        }
    }
}

pub fn model_dims(cfg: &ExperimentConfig, data: &Datasets) -> Vec<usize> {
    let mut dims = vec![data.train.dim()];
    dims.extend(&cfg.hidden);
    dims.push(data.train.classes());
    dims
}

pub fn init_model(cfg: &ExperimentConfig, data: &Datasets, seed: u64) -> Result<Classifier> {
    let mut rng = RandomStream::new(seed.wrapping_add(INIT_SEED_OFFSET));
    Classifier::init(model_dims(cfg, data), &mut rng)
}

/// Checks that a loaded model fits the configured data.
pub fn check_model(model: &Classifier, data: &Datasets, path: &std::path::Path) -> Result<()> {
    if model.input_dim() != data.train.dim() || model.class_count() != data.train.classes() {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "checkpoint maps d={} to C={}, data has d={} C={}",
                model.input_dim(),
                model.class_count(),
                data.train.dim(),
                data.train.classes()
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Vec<MethodMetrics>,
    /// Accuracy on the ID test split, under the mask if one was given.
    pub id_acc: f64,
}

impl Evaluation {
    pub fn get(&self, method: &str) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|m| m.method == method)
    }

    pub fn fpr95(&self, method: &str) -> f64 {
        self.get(method).map_or(f64::NAN, |m| m.fpr95)
    }
}

/// Scores the ID test and OOD splits with every configured method.
pub fn evaluate(cfg: &ExperimentConfig, model: &Classifier, mask: Option<&LayerMask>, data: &Datasets) -> Result<Evaluation> {
    let metrics = cfg
        .methods
        .iter()
        .map(|&sc| {
            let scorer = Scorer::new(model, mask, sc, Some(&data.train))?;
            let set = ScoredSet::new(scorer.oriented_batch(&data.test)?, scorer.oriented_batch(&data.ood)?)?;
            Ok(MethodMetrics {
                method: sc.method.name().to_string(),
                fpr95: fpr95(&set)?,
                auroc: auroc(&set)?,
                aupr: aupr(&set)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let id_acc = match mask {
        Some(m) => masked_accuracy(model, &data.test, m)?,
        None => id_acc(model, &data.test)?,
    };
    Ok(Evaluation { metrics, id_acc })
}

fn due(cfg: &ExperimentConfig, epoch: usize, last: usize) -> bool {
    epoch.is_multiple_of(cfg.eval_every) || epoch == last
}

/// Fills metrics and ID accuracy on the rows due for evaluation.
fn annotate(
    cfg: &ExperimentConfig,
    data: &Datasets,
    record: &mut RunRecord,
    mut model_at: impl FnMut(usize) -> Result<(Classifier, Option<LayerMask>)>,
) -> Result<()> {
    let last = record.rows.last().map_or(0, |r| r.epoch);
    record.config_hash = cfg.hash();
    for (i, row) in record.rows.iter_mut().enumerate() {
        if due(cfg, row.epoch, last) {
            let (m, mask) = model_at(i)?;
            let e = evaluate(cfg, &m, mask.as_ref(), data)?;
            row.metrics = e.metrics;
            row.id_acc = e.id_acc;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Baseline {
    pub checkpoints: Vec<Checkpoint>,
    pub record: RunRecord,
}

impl Baseline {
    pub fn final_model(&self) -> Result<Classifier> {
        self.checkpoints.last().ok_or_else(|| Error::arg("no checkpoints"))?.model()
    }

    /// Checkpoint after 1-based `epoch`.
    pub fn at(&self, epoch: usize) -> Result<&Checkpoint> {
        epoch
            .checked_sub(1)
            .and_then(|i| self.checkpoints.get(i))
            .ok_or_else(|| Error::Config(format!("no checkpoint for epoch {epoch}")))
    }
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64, schedule: Schedule) -> TrainConfig {
    TrainConfig {
        schedule,
        seed,
        ..cfg.train.clone()
    }
}

/// Trains from the seeded initialization and evaluates on the configured cadence.
pub fn train_baseline(cfg: &ExperimentConfig, data: &Datasets, seed: u64, schedule: Schedule) -> Result<Baseline> {
    let mut model = init_model(cfg, data, seed)?;
    let (checkpoints, mut record) = train(&mut model, &data.train, &train_config(cfg, seed, schedule))?;
    record.run_id = format!("train-{}", schedule.name());
    annotate(cfg, data, &mut record, |i| Ok((checkpoints[i].model()?, None)))?;
    Ok(Baseline { checkpoints, record })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub method: String,
    pub best_epoch: usize,
    pub best_fpr95: f64,
    pub final_fpr95: f64,
}

/// Lowest FPR95 over evaluated epochs (earliest on ties) against the last one.
pub fn summarize(record: &RunRecord, method: &str) -> Option<TrajectorySummary> {
    let series = record.fpr95_series(method);
    let &(_, final_fpr95) = series.last()?;
    let (best_epoch, best_fpr95) = series
        .iter()
        .copied()
        .fold((0, f64::INFINITY), |acc, (e, v)| if v < acc.1 { (e, v) } else { acc });
    Some(TrajectorySummary {
        method: method.to_string(),
        best_epoch,
        best_fpr95,
        final_fpr95,
    })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub constraint: f64,
    pub before: Evaluation,
    pub after: Evaluation,
    pub model: Classifier,
    pub record: RunRecord,
}

pub fn run_um(cfg: &ExperimentConfig, data: &Datasets, model: &Classifier, seed: u64) -> Result<FinetuneOutcome> {
    let c = constraint_for(model, cfg.um.delta_keep, &data.train, seed)?;
    let before = evaluate(cfg, model, None, data)?;
    let mut tuned = model.clone();
    let u = &cfg.um;
    let uc = UmConfig {
        constraint: c.value,
        epochs: u.epochs,
        lr: u.lr,
        momentum: u.momentum,
        weight_decay: u.weight_decay,
        batch_size: u.batch_size,
        seed,
    };
    let (ckpts, mut record) = um_finetune(&mut tuned, &data.train, &uc)?;
    annotate(cfg, data, &mut record, |i| Ok((ckpts[i].model()?, None)))?;
    let after = evaluate(cfg, &tuned, None, data)?;
    Ok(FinetuneOutcome {
        constraint: c.value,
        before,
        after,
        model: tuned,
        record,
    })
}

#[derive(Debug, Clone)]
pub struct UmapOutcome {
    pub constraint: f64,
    pub before: Evaluation,
    /// Masked model.
    pub after: Evaluation,
    /// ID accuracy of the model with the mask removed.
    pub unmasked_id_acc: f64,
    pub result: UmapResult,
}

pub fn run_umap(cfg: &ExperimentConfig, data: &Datasets, model: &Classifier, seed: u64) -> Result<UmapOutcome> {
    let c = constraint_for(model, cfg.umap.delta_keep, &data.train, seed)?;
    let before = evaluate(cfg, model, None, data)?;
    let u = &cfg.umap;
    let uc = UmapConfig {
        constraint: c.value,
        prune: u.prune,
        epochs: u.epochs,
        lr: u.lr,
        momentum: u.momentum,
        weight_decay: u.weight_decay,
        batch_size: u.batch_size,
        seed,
    };
    let mut result = umap_train(model, &data.train, &uc)?;
    let masks = result.epoch_masks.clone();
    annotate(cfg, data, &mut result.record, |i| Ok((model.clone(), Some(masks[i].clone()))))?;
    let after = evaluate(cfg, model, Some(&result.mask), data)?;
    Ok(UmapOutcome {
        constraint: c.value,
        before,
        after,
        unmasked_id_acc: id_acc(model, &data.test)?,
        result,
    })
}

pub fn run_oe(cfg: &ExperimentConfig, data: &Datasets, model: &Classifier, seed: u64) -> Result<FinetuneOutcome> {
    let aux = data
        .aux
        .as_ref()
        .ok_or_else(|| Error::Config("outlier exposure needs auxiliary data (data.aux)".into()))?;
    let before = evaluate(cfg, model, None, data)?;
    let o = &cfg.oe;
    let tc = TrainConfig {
        lr: o.lr,
        momentum: o.momentum,
        weight_decay: o.weight_decay,
        epochs: o.epochs,
        batch_size: o.batch_size,
        schedule: Schedule::Cosine,
        seed,
    };
    let mut tuned = model.clone();
    let (ckpts, mut record) = finetune_with_outliers(&mut tuned, &data.train, aux, &o.exposure, &tc)?;
    annotate(cfg, data, &mut record, |i| Ok((ckpts[i].model()?, None)))?;
    let after = evaluate(cfg, &tuned, None, data)?;
    Ok(FinetuneOutcome {
        constraint: f64::NAN,
        before,
        after,
        model: tuned,
        record,
    })
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub selection: usize,
    pub typical_idx: Vec<usize>,
    pub atypical_idx: Vec<usize>,
    /// Accuracy of the selecting checkpoint on each split.
    pub typical_split_acc: f64,
    pub atypical_split_acc: f64,
    /// Planted atypical samples that landed in the atypical split.
    pub planted_recovered: usize,
    pub checkpoint: Evaluation,
    pub typical: Evaluation,
    pub atypical: Evaluation,
}

/// Splits by loss under `checkpoint` and fine-tunes one copy on each split
/// with identical settings (constant lr, same seed).
pub fn run_ablation(cfg: &ExperimentConfig, data: &Datasets, checkpoint: &Checkpoint, seed: u64) -> Result<AblationOutcome> {
    let a = &cfg.ablation;
    let start = checkpoint.model()?;
    let base = evaluate(cfg, &start, None, data)?;
    if a.selection == 0 {
        return Ok(AblationOutcome {
            selection: 0,
            typical_idx: Vec::new(),
            atypical_idx: Vec::new(),
            typical_split_acc: f64::NAN,
            atypical_split_acc: f64::NAN,
            planted_recovered: 0,
            typical: base.clone(),
            atypical: base.clone(),
            checkpoint: base,
        });
    }
    let split = atypical_split(checkpoint, &data.train, a.selection).map_err(|e| match e {
        Error::Argument(m) => Error::Config(format!("ablation.selection: {m}")),
        e => e,
    })?;
    let tc = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        schedule: Schedule::Constant,
        seed,
    };
    let tune = |set: &LabeledSet| -> Result<Evaluation> {
        let mut m = start.clone();
        train(&mut m, set, &tc)?;
        evaluate(cfg, &m, None, data)
    };
    Ok(AblationOutcome {
        selection: a.selection,
        planted_recovered: split.atypical_idx.iter().filter(|i| data.planted.contains(i)).count(),
        typical_split_acc: split.typical_acc,
        atypical_split_acc: split.atypical_acc,
        typical: tune(&split.typical)?,
        atypical: tune(&split.atypical)?,
        checkpoint: base,
        typical_idx: split.typical_idx,
        atypical_idx: split.atypical_idx,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FprCheck {
    pub snr: f64,
    pub empirical: f64,
    pub stderr: f64,
    /// `Φ(−snr)`.
    pub analytic: f64,
}

impl FprCheck {
    pub fn z(&self) -> f64 {
        (self.empirical - self.analytic) / self.stderr
    }
}

/// FPR of `θ = μ` against the closed form, for each signal-to-noise ratio.
pub fn fpr_checks(dims: usize, snrs: &[f64], samples: usize, seed: u64) -> Result<Vec<FprCheck>> {
    let root = RandomStream::new(seed);
    snrs.iter()
        .enumerate()
        .map(|(i, &snr)| {
            let spec = GmmTheorySpec::with_snr(dims, snr);
            let (empirical, stderr) = empirical_fpr(&spec.mu, &spec.mu, spec.sigma, samples, root.child_seed(i as u64))?;
            Ok(FprCheck {
                snr,
                empirical,
                stderr,
                analytic: normal_cdf(-snr),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub rows: Vec<SweepRow>,
    /// `None` when the grid has fewer than two points.
    pub spearman_fpr: Option<f64>,
    pub spearman_cosine: Option<f64>,
    pub checks: Vec<FprCheck>,
}

pub fn theory_spec(cfg: &ExperimentConfig, seed: u64) -> GmmTheorySpec {
    let t = &cfg.theory;
    GmmTheorySpec {
        n1: t.n1,
        n2: t.n2,
        trials: t.trials,
        mc_samples: t.mc_samples,
        retry_cap: t.retry_cap,
        seed,
        ..GmmTheorySpec::with_snr(t.dims, t.snr)
    }
}

pub fn run_theory(cfg: &ExperimentConfig, seed: u64) -> Result<TheoryOutcome> {
    let rows = sweep_margin(&theory_spec(cfg, seed), &cfg.theory.grid)?;
    let b: Vec<f64> = rows.iter().map(|r| r.budget).collect();
    let rank = |y: Vec<f64>| if b.len() >= 2 { spearman(&b, &y).ok() } else { None };
    let spearman_fpr = rank(rows.iter().map(|r| r.mean_fpr).collect());
    let spearman_cosine = rank(rows.iter().map(|r| r.mean_cosine).collect());
    let checks = fpr_checks(cfg.theory.dims, &[1.0, 2.0, 3.0], cfg.theory.check_samples, seed)?;
    Ok(TheoryOutcome {
        rows,
        spearman_fpr,
        spearman_cosine,
        checks,
    })
}
