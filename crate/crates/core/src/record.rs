//! Per-epoch run trajectories and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const RECORD_SCHEMA: &str = "umood-record v1";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// FNV-1a, 64-bit, as 16 hex digits.
pub fn hash_str(s: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Value of the optimised objective (equals `train_loss` for plain CE).
    pub objective: f64,
    pub train_acc: f64,
    pub id_acc: f64,
    pub metrics: Vec<MethodMetrics>,
}

impl EpochRow {
    pub fn new(epoch: usize) -> Self {
        Self {
            epoch,
            train_loss: f64::NAN,
            objective: f64::NAN,
            train_acc: f64::NAN,
            id_acc: f64::NAN,
            metrics: Vec::new(),
        }
    }

    pub fn metric(&self, method: &str) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|m| m.method == method)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<EpochRow>,
}

impl RunRecord {
    pub fn new(run_id: &str, seed: u64, config_hash: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            rows: Vec::new(),
        }
    }

    /// `(epoch, value)` series of one method's FPR95.
    pub fn fpr95_series(&self, method: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.metric(method).map(|m| (r.epoch, m.fpr95)))
            .collect()
    }

    fn header(&self) -> String {
        format!(
            "# {RECORD_SCHEMA} run_id={} seed={} config={} version={}\n",
            self.run_id,
            self.seed,
            self.config_hash,
            env!("CARGO_PKG_VERSION")
        )
    }

    /// `run_id,epoch,train_loss,objective,train_acc,id_acc`
    pub fn train_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("run_id,epoch,train_loss,objective,train_acc,id_acc\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.run_id,
                r.epoch,
                fmt_f64(r.train_loss),
                fmt_f64(r.objective),
                fmt_f64(r.train_acc),
                fmt_f64(r.id_acc)
            );
        }
        s
    }

    /// `run_id,epoch,method,fpr95,auroc,aupr,id_acc`, scores oriented larger ⇒ ID.
    pub fn metrics_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("# orientation: larger score => ID; energy enters as -S_energy\n");
        s.push_str("run_id,epoch,method,fpr95,auroc,aupr,id_acc\n");
        for r in &self.rows {
            for m in &r.metrics {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    self.run_id,
                    r.epoch,
                    m.method,
                    fmt_f64(m.fpr95),
                    fmt_f64(m.auroc),
                    fmt_f64(m.aupr),
                    fmt_f64(r.id_acc)
                );
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train.csv"), self.train_csv())?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        Ok(())
    }
}

/// One parsed row of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub epoch: usize,
    pub method: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub id_acc: f64,
}

pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<MetricsRow>> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (n, line) in text.lines().enumerate() {
        let row = n + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != "run_id,epoch,method,fpr95,auroc,aupr,id_acc" {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    col: 0,
                    detail: "unexpected metrics header".into(),
                });
            }
            saw_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                col: cols.len(),
                detail: format!("expected 7 columns, found {}", cols.len()),
            });
        }
        let num = |c: usize| -> Result<f64> {
            cols[c].parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                col: c + 1,
                detail: format!("not a number: {:?}", cols[c]),
            })
        };
        out.push(MetricsRow {
            run_id: cols[0].to_string(),
            epoch: cols[1].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                col: 2,
                detail: format!("bad epoch {:?}", cols[1]),
            })?,
            method: cols[2].to_string(),
            fpr95: num(3)?,
            auroc: num(4)?,
            aupr: num(5)?,
            id_acc: num(6)?,
        });
    }
    Ok(out)
}
