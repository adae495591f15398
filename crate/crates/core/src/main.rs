use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use umood::harness::commands::{report, run, Command};
use umood::harness::ExperimentConfig;
use umood::{Error, Result};

/// Desk-scale OOD detection lab: training, forgetting fine-tunes, scoring
/// and evaluation on synthetic or CSV data.
#[derive(Parser)]
#[command(name = "umood", version)]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `section.key = value` config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; each seed writes to `<out>/seed-<s>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from this checkpoint instead of training a baseline.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Train the baseline classifier and record per-epoch metrics.
    Train(Common),
    /// Loss and accuracy of the model under random masks over `probe.grid`.
    Probe(Common),
    /// Estimate the forgetting constraint for `um.delta_keep`.
    Estimate(Common),
    /// Fine-tune with the forgetting objective.
    Um(Common),
    /// Learn a pruning mask with the forgetting objective; weights stay frozen.
    Umap(Common),
    /// Fine-tune with auxiliary outliers.
    Oe(Common),
    /// Write per-sample scores for every configured method.
    Score(Common),
    /// FPR95 / AUROC / AUPR and ID accuracy of a model.
    Eval(Common),
    /// FPR95 trajectory over training for each schedule in `phenomenon.schedules`.
    Phenomenon(Common),
    /// Fine-tune on the lowest- vs highest-loss training samples.
    Ablation(Common),
    /// Gaussian-mixture margin-budget sweep.
    Theory(Common),
    /// Charts and a summary table for every record under a directory.
    Report {
        /// Directory to scan (defaults to `--out` or `runs`).
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::parse("")?,
    };
    let mut pairs = Vec::new();
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = c.seed {
        pairs.push(("seeds".into(), s.to_string()));
    }
    if let Some(o) = &c.out {
        pairs.push(("out".into(), o.to_string_lossy().into_owned()));
    }
    let pairs: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if !pairs.is_empty() {
        cfg = cfg.with_all(&pairs)?;
    }
    Ok(cfg)
}

fn dispatch(verb: Verb) -> Result<String> {
    let (cmd, common) = match verb {
        Verb::Report { dir, out } => {
            let dir = dir.or(out).unwrap_or_else(|| PathBuf::from("runs"));
            return report(&dir).map(|(text, _)| text);
        }
        Verb::Train(c) => (Command::Train, c),
        Verb::Probe(c) => (Command::Probe, c),
        Verb::Estimate(c) => (Command::Estimate, c),
        Verb::Um(c) => (Command::Um, c),
        Verb::Umap(c) => (Command::Umap, c),
        Verb::Oe(c) => (Command::Oe, c),
        Verb::Score(c) => (Command::Score, c),
        Verb::Eval(c) => (Command::Eval, c),
        Verb::Phenomenon(c) => (Command::Phenomenon, c),
        Verb::Ablation(c) => (Command::Ablation, c),
        Verb::Theory(c) => (Command::Theory, c),
    };
    let cfg = configure(&common)?;
    run(cmd, &cfg, common.ckpt.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("umood: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
