//! Monte-Carlo study of the averaged-difference linear classifier on a
//! symmetric Gaussian mixture `½N(μ, σ²I) + ½N(−μ, σ²I)`, with auxiliary
//! samples drawn under a boundary-margin budget.

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix, RandomStream};
use crate::record::fmt_f64;

/// Default number of whole-batch attempts before a margin budget is declared infeasible.
pub const DEFAULT_RETRY_CAP: usize = 1 << 17;

/// Acceptance rates below this after the retry cap are reported as infeasible.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmTheorySpec {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub n1: usize,
    pub n2: usize,
    /// Budget `b` on the mean of `|2xᵀμ|` over an aux batch; `f64::INFINITY` disables it.
    pub margin_budget: f64,
    pub trials: usize,
    /// Monte-Carlo draws per FPR estimate.
    pub mc_samples: usize,
    pub retry_cap: usize,
    pub seed: u64,
}

impl GmmTheorySpec {
    /// `μ = (r, 0, …, 0)` with `‖μ‖/σ = snr` at `σ = 1`.
    pub fn with_snr(dims: usize, snr: f64) -> Self {
        let mut mu = vec![0.0; dims];
        if dims > 0 {
            mu[0] = snr;
        }
        Self {
            mu,
            sigma: 1.0,
            n1: 50,
            n2: 50,
            margin_budget: f64::INFINITY,
            trials: 200,
            mc_samples: 20_000,
            retry_cap: DEFAULT_RETRY_CAP,
            seed: 0,
        }
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("μ must be a non-empty finite vector"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg("σ must be positive"));
        }
        if self.n1 == 0 || self.n2 == 0 || self.trials == 0 || self.mc_samples == 0 {
            return Err(Error::arg("sample sizes, trials and Monte-Carlo draws must be >= 1"));
        }
        if !(self.margin_budget >= 0.0) {
            return Err(Error::arg("margin budget must be >= 0"));
        }
        if self.retry_cap == 0 {
            return Err(Error::arg("retry cap must be >= 1"));
        }
        Ok(())
    }
}

fn draw(rng: &mut RandomStream, center: &[f64], sign: f64, sigma: f64, out: &mut [f64]) {
    for (o, &m) in out.iter_mut().zip(center) {
        *o = sign * m + sigma * rng.gaussian();
    }
}

/// `n` rows from `N(sign·μ, σ²I)`.
pub fn gaussian_batch(mu: &[f64], sign: f64, sigma: f64, n: usize, rng: &mut RandomStream) -> Matrix {
    let d = mu.len();
    let mut data = vec![0.0; n * d];
    for row in data.chunks_mut(d.max(1)) {
        draw(rng, mu, sign, sigma, row);
    }
    Matrix::new(n, d, data).expect("finite draws")
}

/// `θ* = (Σ x¹ − Σ x²) / (n1 + n2)`.
pub fn build_theta_star(id: &Matrix, aux: &Matrix) -> Result<Vec<f64>> {
    if id.cols() != aux.cols() {
        return Err(Error::arg("ID and aux samples differ in dimension"));
    }
    let total = id.rows() + aux.rows();
    if total == 0 {
        return Err(Error::arg("no samples"));
    }
    let mut theta = vec![0.0; id.cols()];
    for i in 0..id.rows() {
        for (t, v) in theta.iter_mut().zip(id.row(i)) {
            *t += v;
        }
    }
    for i in 0..aux.rows() {
        for (t, v) in theta.iter_mut().zip(aux.row(i)) {
            *t -= v;
        }
    }
    theta.iter_mut().for_each(|t| *t /= total as f64);
    Ok(theta)
}

/// `μᵀθ / (σ‖θ‖)`.
pub fn cosine_stat(theta: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    if theta.len() != mu.len() {
        return Err(Error::arg("θ and μ differ in dimension"));
    }
    let n = norm(theta);
    if n == 0.0 {
        return Err(Error::arg("θ must be non-zero"));
    }
    if !(sigma > 0.0) {
        return Err(Error::arg("σ must be positive"));
    }
    Ok(dot(mu, theta) / (sigma * n))
}

/// Fraction of `x ~ N(−μ, σ²I)` with `θᵀx ≥ 0`, and its binomial standard error.
pub fn empirical_fpr(theta: &[f64], mu: &[f64], sigma: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if theta.len() != mu.len() {
        return Err(Error::arg("θ and μ differ in dimension"));
    }
    if theta.iter().all(|&t| t == 0.0) {
        return Err(Error::arg("θ must be non-zero"));
    }
    if samples == 0 || !(sigma > 0.0) {
        return Err(Error::arg("need samples >= 1 and σ > 0"));
    }
    let mut rng = RandomStream::new(seed);
    let mut x = vec![0.0; mu.len()];
    let mut hits = 0usize;
    for _ in 0..samples {
        draw(&mut rng, mu, -1.0, sigma, &mut x);
        if dot(theta, &x) >= 0.0 {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    Ok((p, (p * (1.0 - p) / samples as f64).sqrt()))
}

#[derive(Debug, Clone)]
pub struct AuxSample {
    pub samples: Matrix,
    /// Accepted batches over attempted batches.
    pub acceptance_rate: f64,
    pub attempts: usize,
}

/// Whole-batch rejection sampling from `N(−μ, σ²I)` until `Σ|2xᵢᵀμ| ≤ n·b`.
pub fn constrained_aux_sample(
    mu: &[f64],
    sigma: f64,
    n: usize,
    budget: f64,
    retry_cap: usize,
    rng: &mut RandomStream,
) -> Result<AuxSample> {
    if !(budget >= 0.0) {
        return Err(Error::arg("margin budget must be >= 0"));
    }
    if n == 0 || retry_cap == 0 {
        return Err(Error::arg("need n >= 1 and a retry cap >= 1"));
    }
    let limit = n as f64 * budget;
    for attempt in 1..=retry_cap {
        let batch = gaussian_batch(mu, -1.0, sigma, n, rng);
        if budget.is_infinite() {
            return Ok(AuxSample {
                samples: batch,
                acceptance_rate: 1.0,
                attempts: 1,
            });
        }
        let total: f64 = (0..n).map(|i| (2.0 * dot(batch.row(i), mu)).abs()).sum();
        if total <= limit {
            return Ok(AuxSample {
                samples: batch,
                acceptance_rate: 1.0 / attempt as f64,
                attempts: attempt,
            });
        }
    }
    Err(Error::Infeasible(format!(
        "no aux batch met the margin budget b = {budget} in {retry_cap} attempts \
         (acceptance < {MIN_ACCEPTANCE:e}); use a larger b"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: f64,
    pub mean_cosine: f64,
    pub mean_fpr: f64,
    /// Standard error of `mean_fpr` across trials.
    pub stderr: f64,
    pub acceptance_rate: f64,
    pub trials: usize,
}

/// For each budget: draw `x¹ ~ N(μ, σ²I)`, constrained `x²`, build `θ*`, and
/// average the cosine statistic and the Monte-Carlo FPR over trials.
///
/// Every budget reuses the same per-trial seeds, so differences across the
/// grid come from the constraint rather than from sampling noise.
pub fn sweep_margin(spec: &GmmTheorySpec, grid: &[f64]) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::arg("empty margin grid"));
    }
    if let Some(b) = grid.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::arg(format!("invalid margin budget {b}")));
    }
    let root = RandomStream::new(spec.seed);
    grid.iter()
        .map(|&budget| {
            let (mut cos_sum, mut fpr_sum, mut fpr_sq) = (0.0, 0.0, 0.0);
            let (mut attempts, mut accepted) = (0usize, 0usize);
            for t in 0..spec.trials {
                let trial = root.child(t as u64);
                let mut id_rng = trial.child(1);
                let mut aux_rng = trial.child(2);
                let x1 = gaussian_batch(&spec.mu, 1.0, spec.sigma, spec.n1, &mut id_rng);
                let x2 = constrained_aux_sample(&spec.mu, spec.sigma, spec.n2, budget, spec.retry_cap, &mut aux_rng)?;
                attempts += x2.attempts;
                accepted += 1;
                let theta = build_theta_star(&x1, &x2.samples)?;
                cos_sum += cosine_stat(&theta, &spec.mu, spec.sigma)?;
                let (fpr, _) = empirical_fpr(&theta, &spec.mu, spec.sigma, spec.mc_samples, trial.child_seed(3))?;
                fpr_sum += fpr;
                fpr_sq += fpr * fpr;
            }
            let n = spec.trials as f64;
            let mean_fpr = fpr_sum / n;
            let var = if spec.trials > 1 {
                ((fpr_sq - n * mean_fpr * mean_fpr) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(SweepRow {
                budget,
                mean_cosine: cos_sum / n,
                mean_fpr,
                stderr: (var / n).sqrt(),
                acceptance_rate: accepted as f64 / attempts as f64,
                trials: spec.trials,
            })
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
/// `∞` ranks above every finite value.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("spearman needs two equal-length series of length >= 2"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::arg("NaN in rank series"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = ((n + 1.0) / 2.0, (n + 1.0) / 2.0);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric("spearman is undefined for a constant series".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Parses a comma-separated budget grid; `inf` is accepted.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            match t {
                "inf" | "∞" => Ok(f64::INFINITY),
                _ => t
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0)
                    .ok_or_else(|| Error::Usage(format!("bad margin budget {t:?} in grid {s:?}"))),
            }
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Usage("empty margin grid".into()));
    }
    Ok(grid)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("b,mean_cosine,mean_fpr,stderr,acceptance_rate,trials\n");
    for r in rows {
        let b = if r.budget.is_infinite() { "inf".to_string() } else { fmt_f64(r.budget) };
        out.push_str(&format!(
            "{b},{},{},{},{},{}\n",
            fmt_f64(r.mean_cosine),
            fmt_f64(r.mean_fpr),
            fmt_f64(r.stderr),
            fmt_f64(r.acceptance_rate),
            r.trials
        ));
    }
    out
}
