//! Feedforward ReLU classifier with an optional weight mask, manual
//! reverse-mode gradients and SGD with Nesterov momentum.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::masking::LayerMask;
use crate::numerics::{logsumexp_unchecked, softmax_unchecked, Matrix, RandomStream};
use crate::record::{EpochRow, RunRecord};

/// Multilayer perceptron `d0 → d1 → … → dL` with ReLU on hidden layers and
/// identity on the output (logits).
///
/// Parameters live in one flat vector: for each layer the `d_{l+1} × d_l`
/// weight matrix row-major, then its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    dims: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Classifier {
    pub fn from_params(dims: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::arg("classifier needs at least an input and an output layer"));
        }
        if dims.contains(&0) {
            return Err(Error::arg("zero-width layer"));
        }
        if *dims.last().unwrap() < 2 {
            return Err(Error::arg("classifier needs at least 2 classes"));
        }
        if params.len() != param_count(&dims) {
            return Err(Error::arg(format!(
                "dims {dims:?} need {} parameters, got {}",
                param_count(&dims),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite parameter"));
        }
        Ok(Self { dims, params })
    }

    /// Builds from explicit `(weights, bias)` pairs; weights are `out × in`.
    pub fn from_layers(layers: Vec<(Matrix, Vec<f64>)>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::arg("no layers"))?;
        let mut dims = vec![first.0.cols()];
        let mut params = Vec::new();
        for (w, b) in layers {
            if w.cols() != *dims.last().unwrap() || b.len() != w.rows() {
                return Err(Error::arg("layer dimensions do not chain"));
            }
            dims.push(w.rows());
            params.extend_from_slice(w.as_slice());
            params.extend_from_slice(&b);
        }
        Self::from_params(dims, params)
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = param_count(&dims);
        Self::from_params(dims, vec![0.0; n])
    }

    /// He initialisation: weights `N(0, 2/fan_in)`, zero biases.
    pub fn init(dims: Vec<usize>, rng: &mut RandomStream) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        for l in 0..m.layer_count() {
            let std = (2.0 / m.dims[l] as f64).sqrt();
            for w in m.weights_mut(l) {
                *w = rng.normal(0.0, std);
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::arg("parameter length mismatch"));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite parameter"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    pub fn weight_offset(&self, l: usize) -> usize {
        param_count(&self.dims[..=l])
    }

    pub fn weight_count(&self, l: usize) -> usize {
        self.dims[l] * self.dims[l + 1]
    }

    pub fn weight_counts(&self) -> Vec<usize> {
        (0..self.layer_count()).map(|l| self.weight_count(l)).collect()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let o = self.weight_offset(l);
        &self.params[o..o + self.weight_count(l)]
    }

    fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let o = self.weight_offset(l);
        let n = self.weight_count(l);
        &mut self.params[o..o + n]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let o = self.weight_offset(l) + self.weight_count(l);
        &self.params[o..o + self.dims[l + 1]]
    }

    fn check_input(&self, x: &[f64], mask: Option<&LayerMask>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::arg(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(m) = mask {
            m.check_shape(self)?;
        }
        Ok(())
    }

    /// Logits `m ⊙ f(x)`. Masks zero weights only; biases are never masked.
    pub fn forward(&self, x: &[f64], mask: Option<&LayerMask>) -> Result<Vec<f64>> {
        self.check_input(x, mask)?;
        Ok(self.trace(x, mask).logits().to_vec())
    }

    pub(crate) fn logits_unchecked(&self, x: &[f64], mask: Option<&LayerMask>) -> Vec<f64> {
        let mut trace = self.trace(x, mask);
        trace.acts.pop().unwrap()
    }

    /// Activations of hidden layer `layer` (1-based; `layer_count()` gives logits).
    pub fn features(&self, x: &[f64], layer: usize, mask: Option<&LayerMask>) -> Result<Vec<f64>> {
        self.check_input(x, mask)?;
        if layer == 0 || layer > self.layer_count() {
            return Err(Error::arg(format!("no feature layer {layer}")));
        }
        let mut trace = self.trace(x, mask);
        Ok(trace.acts.swap_remove(layer))
    }

    pub(crate) fn trace(&self, x: &[f64], mask: Option<&LayerMask>) -> Trace {
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        let last = self.layer_count() - 1;
        for l in 0..self.layer_count() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let w = self.weights(l);
            let b = self.bias(l);
            let a = &acts[l];
            let mut z = Vec::with_capacity(dout);
            match mask {
                None => {
                    for j in 0..dout {
                        let row = &w[j * din..(j + 1) * din];
                        let mut s = b[j];
                        for i in 0..din {
                            s += row[i] * a[i];
                        }
                        z.push(s);
                    }
                }
                Some(m) => {
                    let keep = &m.layers()[l];
                    for j in 0..dout {
                        let row = &w[j * din..(j + 1) * din];
                        let krow = &keep[j * din..(j + 1) * din];
                        let mut s = b[j];
                        for i in 0..din {
                            if krow[i] {
                                s += row[i] * a[i];
                            }
                        }
                        z.push(s);
                    }
                }
            }
            if l != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Trace { acts }
    }

    /// Backpropagates `dlogits` through a stored trace.
    ///
    /// Accumulates into `grads` the gradient with respect to the *effective*
    /// weights `w ⊙ m` (not multiplied by the mask) and biases, and returns
    /// the gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        mask: Option<&LayerMask>,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let mut g = dlogits.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let a = &trace.acts[l];
            let wo = self.weight_offset(l);
            let bo = wo + din * dout;
            for j in 0..dout {
                let gj = g[j];
                if gj == 0.0 {
                    continue;
                }
                let gw = &mut grads[wo + j * din..wo + (j + 1) * din];
                for i in 0..din {
                    gw[i] += gj * a[i];
                }
                grads[bo + j] += gj;
            }
            let w = self.weights(l);
            let mut prev = vec![0.0; din];
            for j in 0..dout {
                let gj = g[j];
                if gj == 0.0 {
                    continue;
                }
                let row = &w[j * din..(j + 1) * din];
                match mask {
                    None => {
                        for i in 0..din {
                            prev[i] += row[i] * gj;
                        }
                    }
                    Some(m) => {
                        let krow = &m.layers()[l][j * din..(j + 1) * din];
                        for i in 0..din {
                            if krow[i] {
                                prev[i] += row[i] * gj;
                            }
                        }
                    }
                }
            }
            if l > 0 {
                // ReLU derivative; a[i] is the post-activation of layer l-1.
                for i in 0..din {
                    if a[i] <= 0.0 {
                        prev[i] = 0.0;
                    }
                }
            }
            g = prev;
        }
        g
    }

    /// Zeroes gradient entries of masked-out weights.
    pub(crate) fn apply_mask_to_grads(&self, mask: &LayerMask, grads: &mut [f64]) {
        for l in 0..self.layer_count() {
            let o = self.weight_offset(l);
            for (g, &k) in grads[o..o + self.weight_count(l)].iter_mut().zip(&mask.layers()[l]) {
                if !k {
                    *g = 0.0;
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64], mask: Option<&LayerMask>) -> Result<usize> {
        Ok(argmax(&self.forward(x, mask)?))
    }
}

pub(crate) struct Trace {
    /// `acts[0]` is the input, `acts[L]` the logits.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of one sample: loss and `∂loss/∂logits`.
pub(crate) fn ce_with_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let loss = logsumexp_unchecked(logits) - logits[y];
    let mut p = softmax_unchecked(logits);
    p[y] -= 1.0;
    (loss, p)
}

fn check_labels(model: &Classifier, batch: &LabeledSet) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if batch.dim() != model.input_dim() {
        return Err(Error::arg("batch feature dimension does not match model"));
    }
    let c = model.class_count() as i64;
    if let Some(&y) = batch.labels().iter().find(|&&y| y < 0 || y >= c) {
        return Err(Error::arg(format!("label {y} outside [0, {c})")));
    }
    Ok(())
}

/// Mean cross-entropy over `batch` and its gradient with respect to the
/// flat parameter vector. Masked-out weights receive zero gradient.
pub fn ce_loss_and_grads(
    model: &Classifier,
    batch: &LabeledSet,
    mask: Option<&LayerMask>,
) -> Result<(f64, Vec<f64>)> {
    check_labels(model, batch)?;
    if let Some(m) = mask {
        m.check_shape(model)?;
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (loss, mut grads) = ce_effective_grads(model, batch, &idx, mask);
    if let Some(m) = mask {
        model.apply_mask_to_grads(m, &mut grads);
    }
    Ok((loss, grads))
}

/// Mean CE over `idx` and the gradient with respect to effective weights.
pub(crate) fn ce_effective_grads(
    model: &Classifier,
    data: &LabeledSet,
    idx: &[usize],
    mask: Option<&LayerMask>,
) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; model.params().len()];
    let mut total = 0.0;
    let scale = 1.0 / idx.len() as f64;
    for &i in idx {
        let trace = model.trace(data.x(i), mask);
        let (loss, mut d) = ce_with_grad(trace.logits(), data.label(i) as usize);
        total += loss;
        d.iter_mut().for_each(|v| *v *= scale);
        model.backward(&trace, &d, mask, &mut grads);
    }
    (total * scale, grads)
}

/// Mean CE loss without gradients.
pub fn mean_ce_loss(model: &Classifier, data: &LabeledSet, mask: Option<&LayerMask>) -> Result<f64> {
    check_labels(model, data)?;
    if let Some(m) = mask {
        m.check_shape(model)?;
    }
    Ok(per_sample_ce(model, data, mask).iter().sum::<f64>() / data.len() as f64)
}

pub(crate) fn per_sample_ce(model: &Classifier, data: &LabeledSet, mask: Option<&LayerMask>) -> Vec<f64> {
    (0..data.len())
        .map(|i| {
            let z = model.logits_unchecked(data.x(i), mask);
            logsumexp_unchecked(&z) - z[data.label(i) as usize]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `η₀ · ½(1 + cos(π·epoch/epochs))`.
    Cosine,
    Constant,
    /// Flat for the first third, linear to `η₀/10` over the middle third,
    /// then linear to `η₀/100` over the last third.
    Linear3Phase,
    /// Multiplied by 0.1 every 30 epochs.
    Multistep,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Cosine => "cosine",
            Schedule::Constant => "constant",
            Schedule::Linear3Phase => "linear-3-phase",
            Schedule::Multistep => "multistep",
        }
    }

    pub fn all() -> [Schedule; 4] {
        [
            Schedule::Cosine,
            Schedule::Constant,
            Schedule::Linear3Phase,
            Schedule::Multistep,
        ]
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cosine" => Schedule::Cosine,
            "constant" => Schedule::Constant,
            "linear-3-phase" | "linear" => Schedule::Linear3Phase,
            "multistep" => Schedule::Multistep,
            _ => return Err(Error::Config(format!("unknown schedule {s:?}"))),
        })
    }
}

pub const MULTISTEP_PERIOD: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 256,
            schedule: Schedule::Cosine,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::arg("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        lr_at(self, epoch)
    }
}

pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    let n = config.epochs;
    if epoch >= n {
        return Err(Error::arg(format!("epoch {epoch} outside [0, {n})")));
    }
    let lr0 = config.lr;
    let e = epoch as f64;
    let n = n as f64;
    Ok(match config.schedule {
        Schedule::Constant => lr0,
        Schedule::Cosine => lr0 * 0.5 * (1.0 + (PI * e / n).cos()),
        Schedule::Multistep => lr0 * 0.1f64.powi((epoch / MULTISTEP_PERIOD) as i32),
        Schedule::Linear3Phase => {
            let third = n / 3.0;
            if e < third {
                lr0
            } else if e < 2.0 * third {
                lr0 * (1.0 - 0.9 * (e - third) / third)
            } else {
                lr0 * (0.1 - 0.09 * (e - 2.0 * third) / third)
            }
        }
    })
}

/// SGD with Nesterov momentum and L2 weight decay folded into the gradient:
/// `v ← m·v − η·g`, `θ ← θ + m·v − η·g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let m = self.momentum;
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g + self.weight_decay * *p;
            *v = m * *v - lr * g;
            *p = *p + m * *v - lr * g;
        }
    }
}

/// Serialized model plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
}

pub const CHECKPOINT_MAGIC: &str = "UMCKPT1";

impl Checkpoint {
    pub fn of(model: &Classifier, epoch: usize, seed: u64, config_hash: &str) -> Self {
        Self {
            dims: model.dims().to_vec(),
            params: model.params().to_vec(),
            epoch,
            seed,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn model(&self) -> Result<Classifier> {
        Classifier::from_params(self.dims.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{CHECKPOINT_MAGIC} {}", self.dims.len() - 1);
        for d in &self.dims {
            header.push_str(&format!(" {d}"));
        }
        header.push_str(&format!(" epoch={} seed={}", self.epoch, self.seed));
        if !self.config_hash.is_empty() {
            header.push_str(&format!(" config={}", self.config_hash));
        }
        header.push('\n');
        let mut out = header.into_bytes();
        let mut sum = 0u64;
        for v in &self.params {
            let bits = v.to_bits();
            sum = sum.wrapping_add(bits);
            out.extend_from_slice(&bits.to_le_bytes());
        }
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let path_buf = path.to_path_buf();
        if !bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
            return Err(Error::BadMagic {
                path: path_buf,
                expected: CHECKPOINT_MAGIC,
            });
        }
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Truncated {
            path: path_buf.clone(),
            detail: "header line not terminated".into(),
        })?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Parse {
            path: path_buf.clone(),
            row: 1,
            col: 0,
            detail: "header is not ASCII".into(),
        })?;
        let mut tokens = header.split_ascii_whitespace().skip(1);
        let bad = |detail: String| Error::DimensionMismatch {
            path: path_buf.clone(),
            detail,
        };
        let layers: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing layer count".into()))?;
        let mut dims = Vec::with_capacity(layers + 1);
        let mut epoch = 0;
        let mut seed = 0;
        let mut config_hash = String::new();
        for t in tokens {
            if let Some((k, v)) = t.split_once('=') {
                match k {
                    "epoch" => epoch = v.parse().map_err(|_| bad(format!("bad epoch {v:?}")))?,
                    "seed" => seed = v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?,
                    "config" => config_hash = v.to_string(),
                    _ => {}
                }
            } else {
                dims.push(t.parse::<usize>().map_err(|_| bad(format!("bad dimension {t:?}")))?);
            }
        }
        if dims.len() != layers + 1 || layers == 0 {
            return Err(bad(format!(
                "header declares {layers} layers but lists {} dimensions",
                dims.len()
            )));
        }
        let n = param_count(&dims);
        let body = &bytes[nl + 1..];
        if body.len() < n * 8 + 8 {
            return Err(Error::Truncated {
                path: path_buf,
                detail: format!(
                    "expected {} parameter bytes plus checksum, found {}",
                    n * 8,
                    body.len()
                ),
            });
        }
        if body.len() > n * 8 + 8 {
            return Err(bad(format!("{} trailing bytes", body.len() - n * 8 - 8)));
        }
        let mut params = Vec::with_capacity(n);
        let mut sum = 0u64;
        for chunk in body[..n * 8].chunks_exact(8) {
            let bits = u64::from_le_bytes(chunk.try_into().unwrap());
            sum = sum.wrapping_add(bits);
            params.push(f64::from_bits(bits));
        }
        let stored = u64::from_le_bytes(body[n * 8..].try_into().unwrap());
        if stored != sum {
            return Err(Error::Checksum { path: path_buf });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Self {
            dims,
            params,
            epoch,
            seed,
            config_hash,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing {
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    Checkpoint::from_bytes(&bytes, path)
}

/// Gradient oracle for one minibatch: returns `(loss, objective, grads)`.
pub(crate) type StepFn<'a> = dyn FnMut(&Classifier, &[usize], &mut RandomStream) -> Result<(f64, f64, Vec<f64>)> + 'a;

/// Shared epoch loop: reshuffles each epoch, applies the schedule, and
/// records one checkpoint and one row per epoch.
pub(crate) fn sgd_epochs(
    model: &mut Classifier,
    data: &LabeledSet,
    config: &TrainConfig,
    run_id: &str,
    config_hash: &str,
    step: &mut StepFn<'_>,
) -> Result<(Vec<Checkpoint>, RunRecord)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    let root = RandomStream::new(config.seed);
    let mut shuffle = root.child(0x5348_5546);
    let mut aux = root.child(0x4155_5853);
    let mut opt = Sgd::new(model.params().len(), config.momentum, config.weight_decay);
    let mut record = RunRecord::new(run_id, config.seed, config_hash);
    let mut ckpts = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch)?;
        let order = shuffle.permutation(data.len());
        let (mut loss_sum, mut obj_sum, mut count) = (0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let (loss, obj, grads) = step(model, batch, &mut aux)?;
            if !loss.is_finite() || !obj.is_finite() {
                return Err(Error::Training { epoch: epoch + 1, loss });
            }
            opt.step(model.params_mut(), &grads, lr);
            if model.params().iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    epoch: epoch + 1,
                    loss: f64::NAN,
                });
            }
            loss_sum += loss * batch.len() as f64;
            obj_sum += obj * batch.len() as f64;
            count += batch.len();
        }
        let mut row = EpochRow::new(epoch + 1);
        row.train_loss = loss_sum / count as f64;
        row.objective = obj_sum / count as f64;
        row.train_acc = crate::metrics::labeled_accuracy(model, data, None);
        record.rows.push(row);
        ckpts.push(Checkpoint::of(model, epoch + 1, config.seed, config_hash));
    }
    Ok((ckpts, record))
}

/// Plain cross-entropy training. Returns the checkpoint after every epoch.
pub fn train(
    model: &mut Classifier,
    data: &LabeledSet,
    config: &TrainConfig,
) -> Result<(Vec<Checkpoint>, RunRecord)> {
    check_labels(model, data)?;
    let hash = crate::record::hash_str(&format!("{config:?}"));
    sgd_epochs(model, data, config, "train", &hash, &mut |m, idx, _| {
        let (loss, grads) = ce_effective_grads(m, data, idx, None);
        Ok((loss, loss, grads))
    })
}
