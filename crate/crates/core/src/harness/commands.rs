//! CLI command bodies: each runs a pipeline per seed and writes its files
//! under `<out>/seed-<s>/`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::svg::{line_chart, Series};
use super::*;
use crate::masking::{probe_csv, probe_sweep, save_mask};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::record::{fmt_f64, parse_metrics_csv, MetricsRow};
use crate::theory::sweep_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Probe,
    Estimate,
    Um,
    Umap,
    Oe,
    Score,
    Eval,
    Phenomenon,
    Ablation,
    Theory,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Probe => "probe",
            Command::Estimate => "estimate",
            Command::Um => "um",
            Command::Umap => "umap",
            Command::Oe => "oe",
            Command::Score => "score",
            Command::Eval => "eval",
            Command::Phenomenon => "phenomenon",
            Command::Ablation => "ablation",
            Command::Theory => "theory",
        }
    }
}

/// Worker count: `UMOOD_THREADS` if set, else the available parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("UMOOD_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("UMOOD_THREADS={v:?} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` for every configured seed, at most `thread_cap()` at a time.
/// Results come back in seed order; the first failing seed's error wins.
pub fn for_seeds<T: Send>(cfg: &ExperimentConfig, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let n = thread_cap()?.min(cfg.seeds.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| cfg.seeds.par_iter().map(|&s| f(s)).collect());
    results.into_iter().collect()
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out.join(format!("seed-{seed}"))
}

/// Creates the seed directory, or checks that an existing one was produced
/// by the same configuration.
pub fn prepare_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let dir = seed_dir(cfg, seed);
    std::fs::create_dir_all(&dir)?;
    let stamp = dir.join("config.txt");
    let text = format!("# umood config hash={}\n{}", cfg.hash(), cfg.canonical());
    match std::fs::read_to_string(&stamp) {
        Ok(old) if old != text => {
            let old_hash = old.lines().next().and_then(|l| l.split("hash=").nth(1)).unwrap_or("?").to_string();
            Err(Error::Config(format!(
                "{} holds results of config {old_hash}, not {}; use a fresh --out",
                dir.display(),
                cfg.hash()
            )))
        }
        Ok(_) => Ok(dir),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            std::fs::write(&stamp, text)?;
            Ok(dir)
        }
        Err(e) => Err(e.into()),
    }
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn fpr_chart(title: &str, rows: impl Iterator<Item = (String, usize, f64)>) -> String {
    let mut by_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (m, e, v) in rows {
        by_method.entry(m).or_default().push((e as f64, v));
    }
    let series: Vec<Series> = by_method.into_iter().map(|(m, p)| Series::new(m, p)).collect();
    line_chart(title, "epoch", "FPR95", &series)
}

/// `train.csv`, `metrics.csv` and `fpr95.svg` for one record.
pub fn write_record(dir: &Path, record: &RunRecord) -> Result<()> {
    record.write(dir)?;
    let rows = record
        .rows
        .iter()
        .flat_map(|r| r.metrics.iter().map(move |m| (m.method.clone(), r.epoch, m.fpr95)));
    write(&dir.join("fpr95.svg"), &fpr_chart(&format!("{} seed {}", record.run_id, record.seed), rows))
}

fn header(kind: &str, cfg: &ExperimentConfig, seed: u64) -> String {
    format!("# umood {kind} v1 config={} seed={seed}\n", cfg.hash())
}

fn comparison_csv(cfg: &ExperimentConfig, seed: u64, extra: &str, stages: &[(&str, &Evaluation)]) -> String {
    let mut s = header("comparison", cfg, seed);
    s.push_str(extra);
    s.push_str("stage,method,fpr95,auroc,aupr,id_acc\n");
    for (stage, e) in stages {
        for m in &e.metrics {
            let _ = writeln!(
                s,
                "{stage},{},{},{},{},{}",
                m.method,
                fmt_f64(m.fpr95),
                fmt_f64(m.auroc),
                fmt_f64(m.aupr),
                fmt_f64(e.id_acc)
            );
        }
    }
    s
}

fn brief(e: &Evaluation) -> String {
    let m = e.get("energy").or(e.metrics.first());
    match m {
        Some(m) => format!("{} fpr95 {:.4} auroc {:.4} acc {:.4}", m.method, m.fpr95, m.auroc, e.id_acc),
        None => format!("acc {:.4}", e.id_acc),
    }
}

/// Model from `--ckpt`, or a freshly trained baseline saved under `baseline/`.
fn base_model(cfg: &ExperimentConfig, data: &Datasets, seed: u64, ckpt: Option<&Path>, dir: &Path) -> Result<Classifier> {
    match ckpt {
        Some(p) => {
            let m = load_checkpoint(p)?.model()?;
            check_model(&m, data, p)?;
            Ok(m)
        }
        None => {
            let b = train_baseline(cfg, data, seed, cfg.train.schedule)?;
            let bdir = dir.join("baseline");
            write_record(&bdir, &b.record)?;
            save_checkpoint(b.checkpoints.last().expect("epochs >= 1"), &bdir.join("final.ckpt"))?;
            b.final_model()
        }
    }
}

/// Runs `cmd` for every configured seed; returns one summary line per seed.
pub fn run(cmd: Command, cfg: &ExperimentConfig, ckpt: Option<&Path>) -> Result<String> {
    if let Some(p) = ckpt {
        if !p.exists() {
            return Err(Error::Missing { path: p.to_path_buf() });
        }
    }
    let lines = for_seeds(cfg, |seed| {
        let dir = prepare_dir(cfg, seed)?;
        let line = run_seed(cmd, cfg, seed, ckpt, &dir)?;
        Ok(format!("seed {seed}: {line}"))
    })?;
    Ok(lines.join("\n") + "\n")
}

fn run_seed(cmd: Command, cfg: &ExperimentConfig, seed: u64, ckpt: Option<&Path>, dir: &Path) -> Result<String> {
    if cmd == Command::Theory {
        return theory(cfg, seed, dir);
    }
    let data = load_data(cfg, seed)?;
    match cmd {
        Command::Train => {
            let b = train_baseline(cfg, &data, seed, cfg.train.schedule)?;
            write_record(dir, &b.record)?;
            save_checkpoint(b.checkpoints.last().expect("epochs >= 1"), &dir.join("final.ckpt"))?;
            let mid = cfg.ablation.checkpoint_epoch;
            save_checkpoint(b.at(mid)?, &dir.join(format!("epoch-{mid:03}.ckpt")))?;
            let e = evaluate(cfg, &b.final_model()?, None, &data)?;
            Ok(format!("trained {} epochs; {}", cfg.train.epochs, brief(&e)))
        }
        Command::Phenomenon => {
            let mut s = header("phenomenon", cfg, seed);
            s.push_str("schedule,method,best_epoch,best_fpr95,final_fpr95\n");
            let mut line = Vec::new();
            for &sched in &cfg.schedules {
                let b = train_baseline(cfg, &data, seed, sched)?;
                write_record(&dir.join(format!("phenomenon-{}", sched.name())), &b.record)?;
                for sc in &cfg.methods {
                    let t = summarize(&b.record, sc.method.name()).expect("evaluated");
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        sched.name(),
                        t.method,
                        t.best_epoch,
                        fmt_f64(t.best_fpr95),
                        fmt_f64(t.final_fpr95)
                    );
                    if t.method == "energy" || cfg.methods.len() == 1 {
                        line.push(format!(
                            "{} {}: best {:.4}@{} final {:.4}",
                            sched.name(),
                            t.method,
                            t.best_fpr95,
                            t.best_epoch,
                            t.final_fpr95
                        ));
                    }
                }
            }
            write(&dir.join("phenomenon.csv"), &s)?;
            Ok(line.join("; "))
        }
        Command::Probe => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let reports = probe_sweep(&model, &cfg.probe_grid, &data.train, seed)?;
            write(&dir.join("probe.csv"), &(header("probe", cfg, seed) + &probe_csv(&reports)))?;
            let pts: Vec<(f64, f64)> = reports.iter().map(|r| (r.delta, r.loss)).collect();
            write(
                &dir.join("probe.svg"),
                &line_chart("masked training loss", "kept fraction", "CE loss", &[Series::new("loss", pts)]),
            )?;
            Ok(reports
                .iter()
                .map(|r| format!("δ={} loss {:.4} acc {:.4}", r.delta, r.loss, r.accuracy))
                .collect::<Vec<_>>()
                .join("; "))
        }
        Command::Estimate => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let c = constraint_for(&model, cfg.um.delta_keep, &data.train, seed)?;
            save_mask(&c.mask, &dir.join("constraint.mask"))?;
            let mut s = header("constraint", cfg, seed);
            s.push_str("delta_keep,mask_seed,dataset_size,constraint\n");
            let _ = writeln!(s, "{},{},{},{}", fmt_f64(c.delta), c.seed, c.dataset_size, fmt_f64(c.value));
            write(&dir.join("constraint.csv"), &s)?;
            Ok(format!("δ={} ĉ={:.6}", c.delta, c.value))
        }
        Command::Um => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let o = run_um(cfg, &data, &model, seed)?;
            write_record(&dir.join("um"), &o.record)?;
            save_checkpoint(&Checkpoint::of(&o.model, cfg.um.epochs, seed, &cfg.hash()), &dir.join("um.ckpt"))?;
            let extra = format!("# constraint={}\n", fmt_f64(o.constraint));
            write(
                &dir.join("um.csv"),
                &comparison_csv(cfg, seed, &extra, &[("baseline", &o.before), ("um", &o.after)]),
            )?;
            Ok(format!("ĉ={:.6}; before {}; after {}", o.constraint, brief(&o.before), brief(&o.after)))
        }
        Command::Umap => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let o = run_umap(cfg, &data, &model, seed)?;
            write_record(&dir.join("umap"), &o.result.record)?;
            save_mask(&o.result.mask, &dir.join("umap.mask"))?;
            let unmasked = Evaluation {
                id_acc: o.unmasked_id_acc,
                ..o.before.clone()
            };
            let extra = format!("# constraint={}\n", fmt_f64(o.constraint));
            let stages = [("baseline", &o.before), ("umap", &o.after), ("umap-unmasked", &unmasked)];
            write(&dir.join("umap.csv"), &comparison_csv(cfg, seed, &extra, &stages))?;
            Ok(format!(
                "ĉ={:.6}; before {}; masked {}; unmasked acc {:.4}",
                o.constraint,
                brief(&o.before),
                brief(&o.after),
                o.unmasked_id_acc
            ))
        }
        Command::Oe => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let o = run_oe(cfg, &data, &model, seed)?;
            write_record(&dir.join("oe"), &o.record)?;
            save_checkpoint(&Checkpoint::of(&o.model, cfg.oe.epochs, seed, &cfg.hash()), &dir.join("oe.ckpt"))?;
            write(
                &dir.join("oe.csv"),
                &comparison_csv(cfg, seed, "", &[("baseline", &o.before), ("oe", &o.after)]),
            )?;
            Ok(format!("before {}; after {}", brief(&o.before), brief(&o.after)))
        }
        Command::Score => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let mut s = header("scores", cfg, seed);
            s.push_str("# orientation: larger score => ID; energy enters as -S_energy\n");
            s.push_str("sample_id,split,method,score\n");
            for &sc in &cfg.methods {
                let scorer = Scorer::new(&model, None, sc, Some(&data.train))?;
                for (split, set) in [("id_test", &data.test), ("ood_test", &data.ood)] {
                    for (i, v) in scorer.oriented_batch(set)?.into_iter().enumerate() {
                        let _ = writeln!(s, "{i},{split},{},{}", sc.method.name(), fmt_f64(v));
                    }
                }
            }
            write(&dir.join("scores.csv"), &s)?;
            Ok(format!(
                "{} methods x {} samples",
                cfg.methods.len(),
                data.test.len() + data.ood.len()
            ))
        }
        Command::Eval => {
            let model = base_model(cfg, &data, seed, ckpt, dir)?;
            let e = evaluate(cfg, &model, None, &data)?;
            let mut s = header("eval", cfg, seed);
            s.push_str("method,fpr95,auroc,aupr,id_acc\n");
            for m in &e.metrics {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    m.method,
                    fmt_f64(m.fpr95),
                    fmt_f64(m.auroc),
                    fmt_f64(m.aupr),
                    fmt_f64(e.id_acc)
                );
            }
            write(&dir.join("eval.csv"), &s)?;
            Ok(brief(&e))
        }
        Command::Ablation => {
            let ck = match ckpt {
                Some(p) => load_checkpoint(p)?,
                None => {
                    let b = train_baseline(cfg, &data, seed, cfg.train.schedule)?;
                    b.at(cfg.ablation.checkpoint_epoch)?.clone()
                }
            };
            check_model(&ck.model()?, &data, ckpt.unwrap_or(Path::new("checkpoint")))?;
            let o = run_ablation(cfg, &data, &ck, seed)?;
            let mut s = header("ablation", cfg, seed);
            let _ = writeln!(s, "# checkpoint_epoch={} planted_recovered={}", ck.epoch, o.planted_recovered);
            s.push_str("set,size,split_acc,method,fpr95,auroc,aupr,id_acc\n");
            let sets = [
                ("checkpoint", 0, f64::NAN, &o.checkpoint),
                ("typical", o.selection, o.typical_split_acc, &o.typical),
                ("atypical", o.selection, o.atypical_split_acc, &o.atypical),
            ];
            for (name, size, acc, e) in sets {
                for m in &e.metrics {
                    let _ = writeln!(
                        s,
                        "{name},{size},{},{},{},{},{},{}",
                        fmt_f64(acc),
                        m.method,
                        fmt_f64(m.fpr95),
                        fmt_f64(m.auroc),
                        fmt_f64(m.aupr),
                        fmt_f64(e.id_acc)
                    );
                }
            }
            write(&dir.join("ablation.csv"), &s)?;
            Ok(format!(
                "split acc typical {:.3} atypical {:.3}; typical-ft {}; atypical-ft {}",
                o.typical_split_acc,
                o.atypical_split_acc,
                brief(&o.typical),
                brief(&o.atypical)
            ))
        }
        Command::Theory => unreachable!(),
    }
}

fn theory(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<String> {
    let o = run_theory(cfg, seed)?;
    write(&dir.join("theory.csv"), &(header("theory", cfg, seed) + &sweep_csv(&o.rows)))?;
    let mut s = header("theory-summary", cfg, seed);
    s.push_str("statistic,value\n");
    let fmt_opt = |v: Option<f64>| v.map_or("nan".to_string(), fmt_f64);
    let _ = writeln!(s, "spearman_b_fpr,{}", fmt_opt(o.spearman_fpr));
    let _ = writeln!(s, "spearman_b_cosine,{}", fmt_opt(o.spearman_cosine));
    for c in &o.checks {
        let _ = writeln!(s, "fpr_check_snr{}_z,{}", c.snr, fmt_f64(c.z()));
    }
    write(&dir.join("theory_summary.csv"), &s)?;
    let mut s = header("fpr-check", cfg, seed);
    s.push_str("snr,empirical,stderr,analytic\n");
    for c in &o.checks {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(c.snr),
            fmt_f64(c.empirical),
            fmt_f64(c.stderr),
            fmt_f64(c.analytic)
        );
    }
    write(&dir.join("fpr_check.csv"), &s)?;
    let finite: Vec<_> = o.rows.iter().filter(|r| r.budget.is_finite()).collect();
    let fpr: Vec<(f64, f64)> = finite.iter().map(|r| (r.budget, r.mean_fpr)).collect();
    let cos: Vec<(f64, f64)> = finite.iter().map(|r| (r.budget, r.mean_cosine)).collect();
    write(
        &dir.join("theory.svg"),
        &line_chart("mean FPR vs margin budget", "b", "FPR", &[Series::new("mean FPR", fpr)]),
    )?;
    write(
        &dir.join("theory_cosine.svg"),
        &line_chart("mean cosine vs margin budget", "b", "cosine", &[Series::new("mean cosine", cos)]),
    )?;
    Ok(format!(
        "{} budgets; spearman(b, fpr) {}; spearman(b, cos) {}",
        o.rows.len(),
        o.spearman_fpr.map_or("n/a".into(), |v| format!("{v:.3}")),
        o.spearman_cosine.map_or("n/a".into(), |v| format!("{v:.3}"))
    ))
}

fn collect_metrics(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if p != root.join("report") {
                collect_metrics(&p, root, out)?;
            }
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(p);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// Record directory relative to the report root.
    pub run: String,
    pub method: String,
    pub best_epoch: usize,
    pub best_fpr95: f64,
    pub final_fpr95: f64,
    pub final_auroc: f64,
    pub final_aupr: f64,
    pub final_id_acc: f64,
}

fn summary_row(run: &str, rows: &[&MetricsRow]) -> SummaryRow {
    let best = rows.iter().fold(rows[0], |a, r| if r.fpr95 < a.fpr95 { r } else { a });
    let last = rows.iter().fold(rows[0], |a, r| if r.epoch > a.epoch { r } else { a });
    SummaryRow {
        run: run.to_string(),
        method: last.method.clone(),
        best_epoch: best.epoch,
        best_fpr95: best.fpr95,
        final_fpr95: last.fpr95,
        final_auroc: last.auroc,
        final_aupr: last.aupr,
        final_id_acc: last.id_acc,
    }
}

/// Renders one FPR95 chart per record under `<dir>/report/` and a summary
/// table of best/final metrics per record, plus means over seeds.
pub fn report(dir: &Path) -> Result<(String, Vec<SummaryRow>)> {
    if !dir.is_dir() {
        return Err(Error::Missing { path: dir.to_path_buf() });
    }
    let mut files = Vec::new();
    collect_metrics(dir, dir, &mut files)?;
    let mut summary = Vec::new();
    let mut charts = Vec::new();
    for f in &files {
        let rows = parse_metrics_csv(&std::fs::read_to_string(f)?, f)?;
        if rows.is_empty() {
            continue;
        }
        let rel = f.parent().unwrap().strip_prefix(dir).unwrap_or(Path::new(""));
        let run = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let run = if run.is_empty() { ".".to_string() } else { run };
        let mut by_method: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
        for r in &rows {
            by_method.entry(&r.method).or_default().push(r);
        }
        for rs in by_method.values() {
            summary.push(summary_row(&run, rs));
        }
        let chart = fpr_chart(&run, rows.iter().map(|r| (r.method.clone(), r.epoch, r.fpr95)));
        charts.push((run.replace('/', "_").replace('.', "root"), chart));
    }
    if summary.is_empty() {
        return Err(Error::NoRecords { path: dir.to_path_buf() });
    }
    let rdir = dir.join("report");
    for (name, chart) in &charts {
        write(&rdir.join(format!("{name}-fpr95.svg")), chart)?;
    }

    let mut text = String::from("run,method,best_epoch,best_fpr95,final_fpr95,final_auroc,final_aupr,final_id_acc\n");
    for r in &summary {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.run,
            r.method,
            r.best_epoch,
            fmt_f64(r.best_fpr95),
            fmt_f64(r.final_fpr95),
            fmt_f64(r.final_auroc),
            fmt_f64(r.final_aupr),
            fmt_f64(r.final_id_acc)
        );
    }
    // Means over seeds: records grouped by their path with the seed
    // component replaced by `*`.
    let mut groups: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in &summary {
        let key = r
            .run
            .split('/')
            .map(|c| if c.starts_with("seed-") { "*" } else { c })
            .collect::<Vec<_>>()
            .join("/");
        groups.entry((key, r.method.clone())).or_default().push(r);
    }
    text.push_str("\ngroup,method,records,mean_best_fpr95,mean_final_fpr95,mean_final_auroc,mean_final_aupr,mean_final_id_acc\n");
    for ((g, m), rs) in &groups {
        let mean = |f: fn(&SummaryRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
        let _ = writeln!(
            text,
            "{g},{m},{},{},{},{},{},{}",
            rs.len(),
            fmt_f64(mean(|r| r.best_fpr95)),
            fmt_f64(mean(|r| r.final_fpr95)),
            fmt_f64(mean(|r| r.final_auroc)),
            fmt_f64(mean(|r| r.final_aupr)),
            fmt_f64(mean(|r| r.final_id_acc))
        );
    }
    write(&rdir.join("summary.csv"), &text)?;
    Ok((text, summary))
}
