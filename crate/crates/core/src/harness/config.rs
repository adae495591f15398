//! Flat `section.key = value` experiment configuration.
//!
//! Every key has a default, so an empty file is a valid config. Unknown or
//! repeated keys are rejected. The canonical form lists every key in sorted
//! order with its effective value; its FNV-1a hash identifies the
//! experiment. `seeds` and `out` only steer orchestration and are left out
//! of the hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::AtypicalBenchmarkSpec;
use crate::error::{Error, Result};
use crate::exposure::{ExposureConfig, ExposureMethod};
use crate::nn::{Schedule, TrainConfig};
use crate::record::hash_str;
use crate::scoring::{FeatureLayer, Method, Ridge, ScoreConfig};
use crate::theory::parse_grid;

/// `(key, default)` for every accepted key.
pub const KEYS: &[(&str, &str)] = &[
    ("ablation.batch_size", "8"),
    ("ablation.checkpoint_epoch", "50"),
    ("ablation.epochs", "200"),
    ("ablation.lr", "0.05"),
    ("ablation.momentum", "0.9"),
    ("ablation.selection", "8"),
    ("ablation.weight_decay", "0.002"),
    ("benchmark.atyp_sep_deg", "5"),
    ("benchmark.aux_count", "600"),
    ("benchmark.class_gap_deg", "60"),
    ("benchmark.classes", "3"),
    ("benchmark.dims", "2"),
    ("benchmark.ood_count", "600"),
    ("benchmark.ood_spread_deg", "40"),
    ("benchmark.per_class", "500"),
    ("benchmark.r_atyp", "7"),
    ("benchmark.r_aux", "14"),
    ("benchmark.r_id", "4"),
    ("benchmark.r_ood", "10"),
    ("benchmark.rho", "0.05"),
    ("benchmark.sigma_atyp", "0.3"),
    ("benchmark.sigma_aux", "1"),
    ("benchmark.sigma_id", "0.5"),
    ("benchmark.sigma_ood", "1"),
    ("benchmark.test_per_class", "200"),
    ("data.aux", ""),
    ("data.ood", ""),
    ("data.test", ""),
    ("data.train", ""),
    ("eval.every", "1"),
    ("eval.methods", "energy,msp,odin,mahalanobis"),
    ("model.hidden", "64,64"),
    ("oe.aux_batch_size", "64"),
    ("oe.batch_size", "64"),
    ("oe.epochs", "10"),
    ("oe.lambda", "0.5"),
    ("oe.lr", "0.01"),
    ("oe.m_in", "-25"),
    ("oe.m_out", "-7"),
    ("oe.method", "oe"),
    ("oe.momentum", "0.9"),
    ("oe.weight_decay", "0.002"),
    ("out", "runs"),
    ("phenomenon.schedules", "cosine"),
    ("probe.grid", "0.9,0.95,0.97,0.975,0.99,0.995"),
    ("score.energy_temperature", "1"),
    ("score.mahalanobis_layer", "penultimate"),
    ("score.mahalanobis_ridge", "auto"),
    ("score.odin_epsilon", "0.0014"),
    ("score.odin_temperature", "10000"),
    ("seeds", "0"),
    ("theory.check_samples", "1000000"),
    ("theory.dims", "10"),
    ("theory.grid", "inf,20,19,18,17.5,17"),
    ("theory.mc_samples", "20000"),
    ("theory.n1", "50"),
    ("theory.n2", "50"),
    ("theory.retry_cap", "131072"),
    ("theory.snr", "3"),
    ("theory.trials", "200"),
    ("train.batch_size", "64"),
    ("train.epochs", "100"),
    ("train.lr", "0.05"),
    ("train.momentum", "0.9"),
    ("train.schedule", "cosine"),
    ("train.weight_decay", "0.002"),
    ("um.batch_size", "64"),
    ("um.delta_keep", "0.97"),
    ("um.epochs", "20"),
    ("um.lr", "0.05"),
    ("um.momentum", "0.9"),
    ("um.weight_decay", "0.002"),
    ("umap.batch_size", "64"),
    ("umap.delta_keep", "0.97"),
    ("umap.epochs", "10"),
    ("umap.lr", "30"),
    ("umap.momentum", "0.9"),
    ("umap.prune", "0.05"),
    ("umap.weight_decay", "0"),
];

const UNHASHED: &[&str] = &["out", "seeds"];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Benchmark(AtypicalBenchmarkSpec),
    Files {
        train: PathBuf,
        test: PathBuf,
        ood: PathBuf,
        aux: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmSection {
    pub delta_keep: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmapSection {
    pub delta_keep: f64,
    pub prune: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OeSection {
    pub exposure: ExposureConfig,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSection {
    pub checkpoint_epoch: usize,
    pub selection: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySection {
    pub dims: usize,
    pub snr: f64,
    pub n1: usize,
    pub n2: usize,
    pub trials: usize,
    pub mc_samples: usize,
    pub retry_cap: usize,
    pub grid: Vec<f64>,
    /// Draws per closed-form FPR check.
    pub check_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub hidden: Vec<usize>,
    /// `seed` is replaced per run.
    pub train: TrainConfig,
    pub methods: Vec<ScoreConfig>,
    pub eval_every: usize,
    pub um: UmSection,
    pub umap: UmapSection,
    pub oe: OeSection,
    pub probe_grid: Vec<f64>,
    pub schedules: Vec<Schedule>,
    pub ablation: AblationSection,
    pub theory: TheorySection,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    canonical: String,
}

struct Values(BTreeMap<&'static str, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).expect("key listed in KEYS")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a valid value")))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(Error::Config(format!("{key} must be finite")));
        }
        Ok(v)
    }

    fn list<T>(&self, key: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
        let v = self.raw(key);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|t| f(t.trim())).collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seeds = {s:?}: expected a list like 0,1,2 or a range 0..10"));
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim) {
        if let Some((a, b)) = tok.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b <= a {
                return Err(bad());
            }
            out.extend(a..b);
        } else {
            out.push(tok.parse().map_err(|_| bad())?);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    if out.iter().any(|s| !seen.insert(*s)) {
        return Err(Error::Config("seeds must be distinct".into()));
    }
    Ok(out)
}

fn parse_ridge(s: &str) -> Result<Ridge> {
    if s == "auto" {
        return Ok(Ridge::Auto);
    }
    s.parse()
        .map(Ridge::Fixed)
        .map_err(|_| Error::Config(format!("score.mahalanobis_ridge = {s:?}: expected auto or a number")))
}

fn parse_layer(s: &str) -> Result<FeatureLayer> {
    match s {
        "penultimate" => Ok(FeatureLayer::Penultimate),
        "logits" => Ok(FeatureLayer::Logits),
        _ => s
            .strip_prefix("hidden")
            .and_then(|h| h.parse().ok())
            .map(FeatureLayer::Hidden)
            .ok_or_else(|| Error::Config(format!("score.mahalanobis_layer = {s:?}: expected penultimate, logits or hiddenN"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing { path: path.to_path_buf() },
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&'static str, String> = KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let key = KEYS
                .iter()
                .map(|&(key, _)| key)
                .find(|&key| key == k)
                .ok_or_else(|| Error::Config(format!("line {}: unknown key {k:?}", n + 1)))?;
            if !seen.insert(key) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            values.insert(key, v.to_string());
        }
        Self::from_values(Values(values))
    }

    /// Replaces one key and re-validates.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        self.with_all(&[(key, value)])
    }

    /// Replaces several keys, validating only the final combination, so
    /// interdependent keys can change together. Later pairs win.
    pub fn with_all(&self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut text = self.canonical.clone();
        text.push_str(&format!("seeds = {}\nout = {}\n", seeds_str(&self.seeds), self.out.display()));
        let overridden = |l: &str| {
            let k = l.split('=').next().map(str::trim);
            pairs.iter().any(|&(key, _)| Some(key) == k)
        };
        let mut lines: Vec<String> = text.lines().filter(|l| !overridden(l)).map(String::from).collect();
        let mut last: BTreeMap<&str, &str> = BTreeMap::new();
        for &(k, v) in pairs {
            last.insert(k, v);
        }
        lines.extend(last.iter().map(|(k, v)| format!("{k} = {v}")));
        Self::parse(&lines.join("\n"))
    }

    fn from_values(v: Values) -> Result<Self> {
        let data = match (v.path("data.train"), v.path("data.test"), v.path("data.ood")) {
            (None, None, None) => {
                let spec = AtypicalBenchmarkSpec {
                    dims: v.parse("benchmark.dims")?,
                    classes: v.parse("benchmark.classes")?,
                    r_id: v.f64("benchmark.r_id")?,
                    sigma_id: v.f64("benchmark.sigma_id")?,
                    class_gap_deg: v.f64("benchmark.class_gap_deg")?,
                    per_class: v.parse("benchmark.per_class")?,
                    rho: v.f64("benchmark.rho")?,
                    r_atyp: v.f64("benchmark.r_atyp")?,
                    sigma_atyp: v.f64("benchmark.sigma_atyp")?,
                    atyp_sep_deg: v.f64("benchmark.atyp_sep_deg")?,
                    r_ood: v.f64("benchmark.r_ood")?,
                    sigma_ood: v.f64("benchmark.sigma_ood")?,
                    ood_spread_deg: v.f64("benchmark.ood_spread_deg")?,
                    ood_count: v.parse("benchmark.ood_count")?,
                    test_per_class: v.parse("benchmark.test_per_class")?,
                    aux_count: v.parse("benchmark.aux_count")?,
                    r_aux: v.f64("benchmark.r_aux")?,
                    sigma_aux: v.f64("benchmark.sigma_aux")?,
                    seed: 0,
                };
                spec.validate().map_err(|e| Error::Config(format!("benchmark: {e}")))?;
                DataSource::Benchmark(spec)
            }
            (Some(train), Some(test), Some(ood)) => DataSource::Files {
                train,
                test,
                ood,
                aux: v.path("data.aux"),
            },
            _ => return Err(Error::Config("data.train, data.test and data.ood must be set together".into())),
        };

        let hidden = v.list("model.hidden", |t| {
            t.parse::<usize>()
                .ok()
                .filter(|&h| h > 0)
                .ok_or_else(|| Error::Config(format!("model.hidden: bad width {t:?}")))
        })?;

        let train = TrainConfig {
            lr: v.f64("train.lr")?,
            momentum: v.f64("train.momentum")?,
            weight_decay: v.f64("train.weight_decay")?,
            epochs: v.parse("train.epochs")?,
            batch_size: v.parse("train.batch_size")?,
            schedule: v.raw("train.schedule").parse()?,
            seed: 0,
        };
        train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        if train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }

        let ridge = parse_ridge(v.raw("score.mahalanobis_ridge"))?;
        let layer = parse_layer(v.raw("score.mahalanobis_layer"))?;
        let methods = v.list("eval.methods", |t| {
            let method: Method = t.parse()?;
            let mut c = ScoreConfig::new(method);
            match method {
                Method::Energy => c.temperature = v.f64("score.energy_temperature")?,
                Method::Odin => {
                    c.temperature = v.f64("score.odin_temperature")?;
                    c.epsilon = v.f64("score.odin_epsilon")?;
                }
                Method::Mahalanobis => {
                    c.ridge = ridge;
                    c.feature_layer = layer;
                }
                Method::Msp => {}
            }
            c.validate().map_err(|e| Error::Config(format!("score settings for {t}: {e}")))?;
            Ok(c)
        })?;
        if methods.is_empty() {
            return Err(Error::Config("eval.methods must name at least one method".into()));
        }
        let eval_every: usize = v.parse("eval.every")?;
        if eval_every == 0 {
            return Err(Error::Config("eval.every must be at least 1".into()));
        }

        let um = UmSection {
            delta_keep: v.f64("um.delta_keep")?,
            epochs: v.parse("um.epochs")?,
            lr: v.f64("um.lr")?,
            momentum: v.f64("um.momentum")?,
            weight_decay: v.f64("um.weight_decay")?,
            batch_size: v.parse("um.batch_size")?,
        };
        let umap = UmapSection {
            delta_keep: v.f64("umap.delta_keep")?,
            prune: v.f64("umap.prune")?,
            epochs: v.parse("umap.epochs")?,
            lr: v.f64("umap.lr")?,
            momentum: v.f64("umap.momentum")?,
            weight_decay: v.f64("umap.weight_decay")?,
            batch_size: v.parse("umap.batch_size")?,
        };
        for (key, d) in [("um.delta_keep", um.delta_keep), ("umap.delta_keep", umap.delta_keep)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("{key} must lie in (0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&umap.prune) {
            return Err(Error::Config("umap.prune must lie in [0, 1)".into()));
        }
        let method: ExposureMethod = v.raw("oe.method").parse()?;
        let oe = OeSection {
            exposure: ExposureConfig {
                method,
                lambda: v.f64("oe.lambda")?,
                m_in: v.f64("oe.m_in")?,
                m_out: v.f64("oe.m_out")?,
                aux_batch_size: v.parse("oe.aux_batch_size")?,
            },
            epochs: v.parse("oe.epochs")?,
            lr: v.f64("oe.lr")?,
            momentum: v.f64("oe.momentum")?,
            weight_decay: v.f64("oe.weight_decay")?,
            batch_size: v.parse("oe.batch_size")?,
        };
        let probe_grid = v.list("probe.grid", |t| {
            t.parse::<f64>()
                .ok()
                .filter(|d| *d > 0.0 && *d <= 1.0)
                .ok_or_else(|| Error::Config(format!("probe.grid: bad ratio {t:?}")))
        })?;
        let schedules = v.list("phenomenon.schedules", |t| t.parse::<Schedule>())?;
        if schedules.is_empty() {
            return Err(Error::Config("phenomenon.schedules must not be empty".into()));
        }
        let ablation = AblationSection {
            checkpoint_epoch: v.parse("ablation.checkpoint_epoch")?,
            selection: v.parse("ablation.selection")?,
            epochs: v.parse("ablation.epochs")?,
            lr: v.f64("ablation.lr")?,
            momentum: v.f64("ablation.momentum")?,
            weight_decay: v.f64("ablation.weight_decay")?,
            batch_size: v.parse("ablation.batch_size")?,
        };
        if ablation.checkpoint_epoch == 0 || ablation.checkpoint_epoch > train.epochs {
            return Err(Error::Config("ablation.checkpoint_epoch must lie in [1, train.epochs]".into()));
        }
        let theory = TheorySection {
            dims: v.parse("theory.dims")?,
            snr: v.f64("theory.snr")?,
            n1: v.parse("theory.n1")?,
            n2: v.parse("theory.n2")?,
            trials: v.parse("theory.trials")?,
            mc_samples: v.parse("theory.mc_samples")?,
            retry_cap: v.parse("theory.retry_cap")?,
            grid: parse_grid(v.raw("theory.grid"))?,
            check_samples: v.parse("theory.check_samples")?,
        };
        let seeds = parse_seeds(v.raw("seeds"))?;
        let out = PathBuf::from(v.raw("out"));

        let canonical: String = v
            .0
            .iter()
            .filter(|(k, _)| !UNHASHED.contains(k))
            .map(|(k, val)| format!("{k} = {val}\n"))
            .collect();
        Ok(Self {
            data,
            hidden,
            train,
            methods,
            eval_every,
            um,
            umap,
            oe,
            probe_grid,
            schedules,
            ablation,
            theory,
            seeds,
            out,
            canonical,
        })
    }

    /// Every hashed key with its effective value, sorted.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn hash(&self) -> String {
        hash_str(&self.canonical)
    }
}

fn seeds_str(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}
