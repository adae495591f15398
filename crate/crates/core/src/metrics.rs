//! OOD evaluation metrics. ID is the positive class and scores are oriented
//! so that larger means "more ID"; a sample is called ID when `score >= λ`.

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::masking::LayerMask;
use crate::nn::{argmax, Classifier};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub id: Vec<f64>,
    pub ood: Vec<f64>,
}

impl ScoredSet {
    pub fn new(id: Vec<f64>, ood: Vec<f64>) -> Result<Self> {
        let s = Self { id, ood };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.id.is_empty() || self.ood.is_empty() {
            return Err(Error::arg("ranking metrics need ID and OOD scores"));
        }
        if self.id.iter().chain(&self.ood).any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite score"));
        }
        Ok(())
    }
}

/// Smallest `k` with `k / n >= target`.
fn needed(n: usize, target: f64) -> usize {
    let mut k = ((target * n as f64).ceil() as usize).min(n);
    while k > 0 && (k - 1) as f64 / n as f64 >= target {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < target {
        k += 1;
    }
    k
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// FPR at the largest threshold whose TPR reaches `tpr_target`.
pub fn fpr_at_tpr(s: &ScoredSet, tpr_target: f64) -> Result<f64> {
    s.check()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::arg("TPR target must lie in (0, 1]"));
    }
    let id = sorted_desc(&s.id);
    let k = needed(id.len(), tpr_target).max(1);
    let lambda = id[k - 1];
    let fp = s.ood.iter().filter(|&&o| o >= lambda).count();
    Ok(fp as f64 / s.ood.len() as f64)
}

pub fn fpr95(s: &ScoredSet) -> Result<f64> {
    fpr_at_tpr(s, 0.95)
}

/// Probability that an ID score exceeds an OOD score, ties counted half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    s.check()?;
    let mut all: Vec<(f64, bool)> = s
        .id
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ood_below = 0usize;
    let mut wins2 = 0u128; // twice the win count, keeps ties exact
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        let (mut n_id, mut n_ood) = (0usize, 0usize);
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                n_id += 1;
            } else {
                n_ood += 1;
            }
            i += 1;
        }
        wins2 += (n_id as u128) * (2 * ood_below as u128 + n_ood as u128);
        ood_below += n_ood;
    }
    Ok(wins2 as f64 / (2.0 * s.id.len() as f64 * s.ood.len() as f64))
}

/// Step-wise average precision with ID as positive:
/// `Σ_k (R_k − R_{k−1}) · P_k` over descending unique thresholds.
pub fn aupr(s: &ScoredSet) -> Result<f64> {
    s.check()?;
    let mut all: Vec<(f64, bool)> = s
        .id
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_id = s.id.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_id;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Fraction of samples whose argmax logit equals the label.
pub fn id_acc(model: &Classifier, test: &LabeledSet) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::arg("empty test set"));
    }
    if !test.is_labeled() {
        return Err(Error::arg("accuracy needs labeled data"));
    }
    if test.dim() != model.input_dim() {
        return Err(Error::arg("test feature dimension does not match model"));
    }
    Ok(labeled_accuracy(model, test, None))
}

pub(crate) fn labeled_accuracy(model: &Classifier, data: &LabeledSet, mask: Option<&LayerMask>) -> f64 {
    let correct = (0..data.len())
        .filter(|&i| argmax(&model.logits_unchecked(data.x(i), mask)) as i64 == data.label(i))
        .count();
    correct as f64 / data.len() as f64
}

/// Accuracy of `m ⊙ f`.
pub fn masked_accuracy(model: &Classifier, data: &LabeledSet, mask: &LayerMask) -> Result<f64> {
    mask.check_shape(model)?;
    if data.is_empty() {
        return Err(Error::arg("empty test set"));
    }
    Ok(labeled_accuracy(model, data, Some(mask)))
}
