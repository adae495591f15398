//! Acceptance suite. Runs every criterion at its fixed tolerance, prints one
//! PASS/FAIL line each and exits non-zero if any fails.
//!
//! `cargo test --test acceptance -- 3 7` runs only the listed criteria.

use std::path::Path;
use std::process::Command as Proc;
use std::sync::OnceLock;
use std::time::Instant;

use umood::data::LabeledSet;
use umood::exposure::{combined_loss_and_grads, ExposureConfig, ExposureMethod};
use umood::forgetting::{um_finetune, um_objective, UmConfig};
use umood::harness::{
    load_data, run_ablation, run_theory, run_um, run_umap, summarize, train_baseline, AblationOutcome, Baseline,
    Datasets, ExperimentConfig, FinetuneOutcome, UmapOutcome,
};
use umood::masking::gen_mask;
use umood::metrics::{aupr, auroc, fpr95, ScoredSet};
use umood::nn::{ce_loss_and_grads, mean_ce_loss, Checkpoint, Classifier, Schedule};
use umood::numerics::{finite_diff_grad, logsumexp, Matrix, RandomStream};
use umood::scoring::{odin_input_grad, score_energy, score_msp, score_odin};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SEEDS: u64 = 10;

// ---------------------------------------------------------------------------
// Shared helpers

/// Random MLP with 1–2 hidden layers.
fn random_net(rng: &mut RandomStream) -> Classifier {
    let d = 2 + rng.below(3);
    let mut dims = vec![d, 3 + rng.below(4)];
    if rng.below(2) == 1 {
        dims.push(3 + rng.below(4));
    }
    dims.push(2 + rng.below(3));
    let mut m = Classifier::init(dims, rng).unwrap();
    // Non-zero biases so every unit is exercised.
    let mut p = m.params().to_vec();
    for l in 0..m.layer_count() {
        let o = m.weight_offset(l) + m.weight_count(l);
        for j in 0..m.dims()[l + 1] {
            p[o + j] = rng.normal(0.0, 0.3);
        }
    }
    m.set_params(&p).unwrap();
    m
}

fn random_set(rng: &mut RandomStream, n: usize, d: usize, classes: usize, labeled: bool) -> LabeledSet {
    let data: Vec<f64> = (0..n * d).map(|_| rng.normal(0.0, 1.5)).collect();
    let labels = (0..n).map(|_| if labeled { rng.below(classes) as i64 } else { -1 }).collect();
    LabeledSet::new(Matrix::new(n, d, data).unwrap(), labels, classes).unwrap()
}

/// Hidden pre-activations computed directly from the weights (row-major
/// `out × in`), independent of the library's forward pass.
fn pre_activations(m: &Classifier, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut out = Vec::new();
    for l in 0..m.layer_count() {
        let (din, dout) = (m.dims()[l], m.dims()[l + 1]);
        let (w, b) = (m.weights(l), m.bias(l));
        let z: Vec<f64> = (0..dout)
            .map(|j| b[j] + (0..din).map(|i| w[j * din + i] * a[i]).sum::<f64>())
            .collect();
        if l + 1 < m.layer_count() {
            out.extend(&z);
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    out
}

/// True if no hidden unit sits within `gap` of its ReLU kink on any sample,
/// so central differences with a much smaller step see a smooth function.
fn away_from_kinks(m: &Classifier, sets: &[&LabeledSet], gap: f64) -> bool {
    sets.iter()
        .all(|s| (0..s.len()).all(|i| pre_activations(m, s.x(i)).iter().all(|z| z.abs() > gap)))
}

fn with_params(m: &Classifier, p: &[f64]) -> Classifier {
    Classifier::from_params(m.dims().to_vec(), p.to_vec()).unwrap()
}

fn default_cfg() -> ExperimentConfig {
    ExperimentConfig::parse("eval.methods = energy").unwrap()
}

struct SeedRun {
    data: Datasets,
    baseline: Baseline,
}

fn seed_runs() -> &'static Vec<SeedRun> {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = default_cfg();
        (0..SEEDS)
            .map(|s| {
                let data = load_data(&cfg, s).unwrap();
                let baseline = train_baseline(&cfg, &data, s, Schedule::Cosine).unwrap();
                SeedRun { data, baseline }
            })
            .collect()
    })
}

fn um_runs() -> &'static Vec<FinetuneOutcome> {
    static RUNS: OnceLock<Vec<FinetuneOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = default_cfg();
        seed_runs()
            .iter()
            .enumerate()
            .map(|(s, r)| run_um(&cfg, &r.data, &r.baseline.final_model().unwrap(), s as u64).unwrap())
            .collect()
    })
}

/// UMAP outcome plus checkpoint bytes before and after the run.
type UmapRun = (UmapOutcome, Vec<u8>, Vec<u8>);

fn umap_runs() -> &'static Vec<UmapRun> {
    static RUNS: OnceLock<Vec<UmapRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = default_cfg();
        seed_runs()
            .iter()
            .enumerate()
            .map(|(s, r)| {
                let model = r.baseline.final_model().unwrap();
                let before = Checkpoint::of(&model, 100, s as u64, "").to_bytes();
                let o = run_umap(&cfg, &r.data, &model, s as u64).unwrap();
                let after = Checkpoint::of(&model, 100, s as u64, "").to_bytes();
                (o, before, after)
            })
            .collect()
    })
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

/// Norm-wise relative error `‖a − b‖∞ / ‖b‖∞`. Per-component ratios would
/// measure differencing round-off (≈ ε·|f|/h) on near-zero components
/// rather than the gradient.
fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    let diff = analytic.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn criterion_1() -> Outcome {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    let mut rng = RandomStream::new(0xC1);
    let mut worst = [0.0f64; 5];
    let mut nets = 0;
    while nets < 100 {
        let m = random_net(&mut rng);
        let (d, c) = (m.input_dim(), m.class_count());
        let batch = random_set(&mut rng, 6, d, c, true);
        let aux = random_set(&mut rng, 5, d, c, false);
        if !away_from_kinks(&m, &[&batch, &aux], 1e-3) {
            continue;
        }
        nets += 1;
        let theta = m.params().to_vec();
        let idx: Vec<usize> = (0..batch.len()).collect();
        let aux_idx: Vec<usize> = (0..aux.len()).collect();

        // CE
        let (loss, g) = ce_loss_and_grads(&m, &batch, None).unwrap();
        let fd = finite_diff_grad(|p| mean_ce_loss(&with_params(&m, p), &batch, None).unwrap(), &theta, H).unwrap();
        worst[0] = worst[0].max(rel_err(&g, &fd));

        // UM objective on both sides of the kink
        for c_hat in [loss + 0.25, loss * 0.5] {
            let (_, scale) = um_objective(loss, c_hat);
            let analytic: Vec<f64> = g.iter().map(|v| v * scale).collect();
            let fd = finite_diff_grad(
                |p| um_objective(mean_ce_loss(&with_params(&m, p), &batch, None).unwrap(), c_hat).0,
                &theta,
                H,
            )
            .unwrap();
            worst[1] = worst[1].max(rel_err(&analytic, &fd));
        }

        // OE and energy-bound. Margins sit one unit inside the observed
        // energies: both hinges active, objective O(1) so differencing
        // round-off stays below the tolerance.
        let energies = |s: &LabeledSet| -> Vec<f64> {
            (0..s.len()).map(|i| -score_energy(&m, s.x(i), 1.0, None).unwrap()).collect()
        };
        let id_energy_min = energies(&batch).into_iter().fold(f64::INFINITY, f64::min);
        let aux_energy_max = energies(&aux).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let oe = ExposureConfig {
            method: ExposureMethod::Oe,
            ..Default::default()
        };
        let eb = ExposureConfig {
            method: ExposureMethod::EnergyBound,
            m_in: id_energy_min - 1.0,
            m_out: aux_energy_max + 1.0,
            ..Default::default()
        };
        for (slot, cfg) in [(2, &oe), (3, &eb)] {
            let (_, _, g) = combined_loss_and_grads(&m, &batch, &idx, &aux, &aux_idx, cfg);
            let fd = finite_diff_grad(
                |p| combined_loss_and_grads(&with_params(&m, p), &batch, &idx, &aux, &aux_idx, cfg).1,
                &theta,
                H,
            )
            .unwrap();
            worst[slot] = worst[slot].max(rel_err(&g, &fd));
        }

        // ODIN input gradient of log max softmax(f(x)/T)
        for i in 0..2 {
            let x = batch.x(i);
            for t in [1.0, 10.0] {
                let z0 = m.forward(x, None).unwrap();
                let top = (0..z0.len()).fold(0, |a, k| if z0[k] > z0[a] { k } else { a });
                let analytic = odin_input_grad(&m, x, t, None).unwrap();
                let fd = finite_diff_grad(
                    |xp| {
                        // log p_top without cancellation when the softmax saturates
                        let z: Vec<f64> = m.forward(xp, None).unwrap().iter().map(|v| v / t).collect();
                        let rest: f64 = (0..z.len()).filter(|&k| k != top).map(|k| (z[k] - z[top]).exp()).sum();
                        -rest.ln_1p()
                    },
                    x,
                    H,
                )
                .unwrap();
                worst[4] = worst[4].max(rel_err(&analytic, &fd));
            }
        }
    }
    let pass = worst.iter().all(|&w| w <= TOL);
    outcome(
        pass,
        format!(
            "max rel err over {nets} nets: CE {:.1e}, UM {:.1e}, OE {:.1e}, energy-bound {:.1e}, ODIN {:.1e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Metric oracles

fn oracle_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    let n = id.len();
    let mut cands: Vec<f64> = id.iter().chain(ood).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    // Largest λ with #{id ≥ λ} / n ≥ 0.95, decided in integers.
    let lambda = cands
        .iter()
        .rev()
        .find(|&&l| 100 * id.iter().filter(|&&v| v >= l).count() >= 95 * n)
        .copied()
        .unwrap();
    ood.iter().filter(|&&v| v >= lambda).count() as f64 / ood.len() as f64
}

fn oracle_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in id {
        for &b in ood {
            s += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (id.len() * ood.len()) as f64
}

fn oracle_aupr(id: &[f64], ood: &[f64]) -> f64 {
    let mut cands: Vec<f64> = id.iter().chain(ood).copied().collect();
    cands.sort_by(|a, b| b.total_cmp(a));
    cands.dedup();
    let (mut ap, mut prev_r) = (0.0, 0.0);
    for t in cands {
        let tp = id.iter().filter(|&&v| v >= t).count() as f64;
        let fp = ood.iter().filter(|&&v| v >= t).count() as f64;
        let r = tp / id.len() as f64;
        ap += (r - prev_r) * tp / (tp + fp);
        prev_r = r;
    }
    ap
}

fn criterion_2() -> Outcome {
    let mut rng = RandomStream::new(0xC2);
    let mut worst = 0.0f64;
    let mut tie_sets = 0;
    for k in 0..100 {
        let n = 1 + rng.below(500);
        let m = 1 + rng.below(500);
        let (id, ood): (Vec<f64>, Vec<f64>) = if k % 2 == 0 {
            tie_sets += 1;
            let levels = 1 + rng.below(6);
            (
                (0..n).map(|_| rng.below(levels) as f64 + 1.0).collect(),
                (0..m).map(|_| rng.below(levels) as f64).collect(),
            )
        } else {
            let shift = rng.uniform() * 3.0;
            (
                (0..n).map(|_| rng.normal(shift, 1.0)).collect(),
                (0..m).map(|_| rng.normal(0.0, 1.0)).collect(),
            )
        };
        let s = ScoredSet::new(id.clone(), ood.clone()).unwrap();
        worst = worst
            .max((fpr95(&s).unwrap() - oracle_fpr95(&id, &ood)).abs())
            .max((auroc(&s).unwrap() - oracle_auroc(&id, &ood)).abs())
            .max((aupr(&s).unwrap() - oracle_aupr(&id, &ood)).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("100 sets ({tie_sets} tie-heavy): max |fast − oracle| = {worst:.1e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------------------
// 3. Score identities

fn shifted(m: &Classifier, a: f64) -> Classifier {
    let mut p = m.params().to_vec();
    let l = m.layer_count() - 1;
    let o = m.weight_offset(l) + m.weight_count(l);
    for j in 0..m.class_count() {
        p[o + j] += a;
    }
    with_params(m, &p)
}

fn criterion_3() -> Outcome {
    let mut rng = RandomStream::new(0xC3);
    let (mut odin_exact, mut e_err, mut shift_err, mut msp_err) = (true, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let m = random_net(&mut rng);
        let a = rng.normal(0.0, 20.0);
        let ms = shifted(&m, a);
        let set = random_set(&mut rng, 200, m.input_dim(), m.class_count(), false);
        for i in 0..set.len() {
            let x = set.x(i);
            odin_exact &= score_odin(&m, x, 1.0, 0.0, None).unwrap().to_bits() == score_msp(&m, x, None).unwrap().to_bits();
            let e = score_energy(&m, x, 1.0, None).unwrap();
            e_err = e_err.max((e + logsumexp(&m.forward(x, None).unwrap()).unwrap()).abs());
            shift_err = shift_err.max((score_energy(&ms, x, 1.0, None).unwrap() - (e - a)).abs());
            msp_err = msp_err.max((score_msp(&ms, x, None).unwrap() - score_msp(&m, x, None).unwrap()).abs());
        }
    }
    let pass = odin_exact && e_err <= 1e-9 && shift_err <= 1e-9 && msp_err <= 1e-12;
    outcome(
        pass,
        format!(
            "ODIN(0,1)==MSP bitwise: {odin_exact}; |E+lse| {e_err:.1e}; shift {shift_err:.1e}; MSP shift {msp_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Mask contracts

fn criterion_4() -> Outcome {
    let mut rng = RandomStream::new(0xC4);
    let mut identical = true;
    let mut counts_ok = true;
    for k in 0..20 {
        let m = random_net(&mut rng);
        let full = gen_mask(&m, 1.0, k).unwrap();
        let set = random_set(&mut rng, 50, m.input_dim(), m.class_count(), false);
        for i in 0..set.len() {
            let a = m.forward(set.x(i), None).unwrap();
            let b = m.forward(set.x(i), Some(&full)).unwrap();
            identical &= a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }
    let big = Classifier::init(vec![7, 33, 129, 5], &mut rng).unwrap();
    for delta in [0.3, 0.5, 0.97, 0.975, 0.995] {
        for (k, net) in [&big].into_iter().chain(std::iter::once(&random_net(&mut rng))).enumerate() {
            let mask = gen_mask(net, delta, k as u64).unwrap();
            for (l, layer) in mask.layers().iter().enumerate() {
                let n = net.weight_count(l);
                let want = (delta * n as f64).round() as usize;
                counts_ok &= layer.len() == n && layer.iter().filter(|&&b| b).count() == want;
            }
        }
    }
    outcome(
        identical && counts_ok,
        format!("identity mask bit-identical: {identical}; retained == round(δ·n) for all layers: {counts_ok}"),
    )
}

// ---------------------------------------------------------------------------
// 5. UMAP weight preservation

fn criterion_5() -> Outcome {
    let runs = umap_runs();
    let mut bytes_same = runs.iter().all(|(_, b, a)| b == a);
    let acc_same = runs
        .iter()
        .all(|(o, _, _)| o.unmasked_id_acc.to_bits() == o.before.id_acc.to_bits());

    // Through the CLI: the checkpoint file is untouched by `umap --ckpt`.
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("model.ckpt");
    umood::nn::save_checkpoint(&seed_runs()[0].baseline.checkpoints[99], &ck).unwrap();
    let before = std::fs::read(&ck).unwrap();
    let status = Proc::new(env!("CARGO_BIN_EXE_umood"))
        .args(["umap", "--seed", "0", "--set", "umap.epochs=2", "--set", "eval.methods=energy", "--ckpt"])
        .arg(&ck)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    bytes_same &= status.success() && std::fs::read(&ck).unwrap() == before;
    outcome(
        bytes_same && acc_same,
        format!(
            "{} runs + CLI: checkpoint bytes unchanged {bytes_same}; unmasked ID-ACC == baseline exactly {acc_same}",
            runs.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. UM objective law

fn criterion_6() -> Outcome {
    let mut rng = RandomStream::new(0xC6);
    let mut law = true;
    for k in 0..10_000 {
        let c = rng.uniform() * 5.0;
        let l = if k % 10 == 0 { c } else { rng.uniform() * 5.0 };
        let (v, _) = um_objective(l, c);
        law &= v >= c && ((v == c) == (l == c));
    }

    // One full-batch step without momentum or decay: Δθ = −η·(±∇ℓ).
    let mut update = true;
    let mut signs = (0, 0);
    for _ in 0..20 {
        let m = random_net(&mut rng);
        let data = random_set(&mut rng, 12, m.input_dim(), m.class_count(), true);
        let (loss, g) = ce_loss_and_grads(&m, &data, None).unwrap();
        for c_hat in [loss + 0.5, loss * 0.5] {
            let lr = 0.1;
            let cfg = UmConfig {
                constraint: c_hat,
                epochs: 1,
                lr,
                momentum: 0.0,
                weight_decay: 0.0,
                batch_size: data.len(),
                seed: 1,
            };
            let mut tuned = m.clone();
            um_finetune(&mut tuned, &data, &cfg).unwrap();
            let s = if loss > c_hat { 1.0 } else { -1.0 };
            if s > 0.0 {
                signs.0 += 1;
            } else {
                signs.1 += 1;
            }
            for ((after, before), gi) in tuned.params().iter().zip(m.params()).zip(&g) {
                update &= ((after - before) - (-lr * s * gi)).abs() <= 1e-12 * before.abs().max(1.0);
            }
        }
    }
    outcome(
        law && update,
        format!(
            "10^4 pairs: value ≥ ĉ, equality iff ℓ = ĉ: {law}; update == ±∇ℓ coordinate-wise ({} descent, {} ascent): {update}",
            signs.0, signs.1
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Phenomenon

fn criterion_7() -> Outcome {
    let mut hits = 0;
    let mut cells = Vec::new();
    for r in seed_runs() {
        let t = summarize(&r.baseline.record, "energy").unwrap();
        if t.best_fpr95 <= t.final_fpr95 - 0.05 {
            hits += 1;
        }
        cells.push(format!("{:.3}@{}/{:.3}", t.best_fpr95, t.best_epoch, t.final_fpr95));
    }
    outcome(
        hits >= 8,
        format!("best ≤ final − 0.05 in {hits}/{SEEDS} seeds (need 8) [best@epoch/final: {}]", cells.join(" ")),
    )
}

// ---------------------------------------------------------------------------
// 8. UM / UMAP recovery

fn criterion_8() -> Outcome {
    let mut um_hits = 0;
    let mut umap_hits = 0;
    let mut umap_acc_exact = true;
    let mut cells = Vec::new();
    for (s, r) in seed_runs().iter().enumerate() {
        let final_fpr = summarize(&r.baseline.record, "energy").unwrap().final_fpr95;
        let u = &um_runs()[s];
        if u.after.fpr95("energy") < final_fpr && u.before.id_acc - u.after.id_acc <= 0.03 {
            um_hits += 1;
        }
        let (p, _, _) = &umap_runs()[s];
        umap_acc_exact &= p.unmasked_id_acc.to_bits() == p.before.id_acc.to_bits();
        if p.after.fpr95("energy") < final_fpr {
            umap_hits += 1;
        }
        cells.push(format!(
            "{:.3}>{:.3}|{:.3}",
            final_fpr,
            u.after.fpr95("energy"),
            p.after.fpr95("energy")
        ));
    }
    outcome(
        um_hits >= 8 && umap_hits >= 7 && umap_acc_exact,
        format!(
            "UM {um_hits}/{SEEDS} (need 8); UMAP {umap_hits}/{SEEDS} (need 7), unmasked ACC unchanged {umap_acc_exact} [final>UM|UMAP: {}]",
            cells.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Typical / atypical ablation

fn criterion_9() -> Outcome {
    let cfg = default_cfg();
    let outs: Vec<AblationOutcome> = seed_runs()
        .iter()
        .enumerate()
        .map(|(s, r)| {
            let ck = r.baseline.at(cfg.ablation.checkpoint_epoch).unwrap();
            run_ablation(&cfg, &r.data, ck, s as u64).unwrap()
        })
        .collect();
    let direction = outs
        .iter()
        .filter(|o| o.typical.fpr95("energy") <= o.atypical.fpr95("energy"))
        .count();
    let accs = outs
        .iter()
        .all(|o| o.atypical_split_acc < 0.2 && o.typical_split_acc == 1.0);
    let cells: Vec<String> = outs
        .iter()
        .map(|o| {
            format!(
                "{:.3}/{:.3}({:.2},{:.2})",
                o.typical.fpr95("energy"),
                o.atypical.fpr95("energy"),
                o.typical_split_acc,
                o.atypical_split_acc
            )
        })
        .collect();
    outcome(
        direction >= 8 && accs,
        format!(
            "typical ≤ atypical FPR95 in {direction}/{SEEDS} (need 8); split ACC atypical < 0.2 and typical = 1 in every seed: {accs} [typ/atyp(acc): {}]",
            cells.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Theory simulation

fn criterion_10() -> Outcome {
    let cfg = default_cfg();
    let o = run_theory(&cfg, 0).unwrap();
    let checks_ok = o.checks.iter().all(|c| c.z().abs() <= 3.0);
    let checks: Vec<String> = o.checks.iter().map(|c| format!("snr {} z={:+.2}", c.snr, c.z())).collect();
    let rf = o.spearman_fpr.unwrap_or(f64::NAN);
    let rc = o.spearman_cosine.unwrap_or(f64::NAN);
    let sweep_ok = rf >= 0.8 && rc <= -0.8;
    let fprs: Vec<String> = o.rows.iter().map(|r| format!("{}:{:.3e}", r.budget, r.mean_fpr)).collect();
    outcome(
        checks_ok && sweep_ok,
        format!(
            "closed-form FPR at 10^6 draws within 3 SE: {checks_ok} ({}); sweep spearman(b,FPR) {rf:+.3} (need ≥ 0.8), spearman(b,cos) {rc:+.3} (need ≤ −0.8) [b:FPR {}]",
            checks.join(", "),
            fprs.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. CLI determinism

fn run_all(out: &Path, cfg: &Path, threads: &str) -> bool {
    let verbs = [
        "train",
        "probe",
        "estimate",
        "um",
        "umap",
        "oe",
        "score",
        "eval",
        "phenomenon",
        "ablation",
        "theory",
    ];
    let mut ok = true;
    for v in verbs {
        ok &= Proc::new(env!("CARGO_BIN_EXE_umood"))
            .args([v, "--config"])
            .arg(cfg)
            .arg("--out")
            .arg(out)
            .env("UMOOD_THREADS", threads)
            .output()
            .unwrap()
            .status
            .success();
    }
    ok &= Proc::new(env!("CARGO_BIN_EXE_umood"))
        .arg("report")
        .arg(out)
        .output()
        .unwrap()
        .status
        .success();
    ok
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "seeds = 0,1\ntrain.epochs = 8\nablation.checkpoint_epoch = 4\nablation.epochs = 10\n\
         um.epochs = 3\numap.epochs = 3\noe.epochs = 3\nbenchmark.per_class = 200\n\
         phenomenon.schedules = cosine,constant,linear-3-phase,multistep\n\
         theory.trials = 10\ntheory.mc_samples = 2000\ntheory.check_samples = 20000\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ran = run_all(&a, &cfg, "2") && run_all(&b, &cfg, "1");
    let (ta, tb) = (tree(&a), tree(&b));
    let csv_svg = ta.iter().filter(|(p, _)| p.ends_with(".csv") || p.ends_with(".svg")).count();
    let same = ta == tb;
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .take(3)
        .collect();
    outcome(
        ran && same && csv_svg > 0,
        format!(
            "12 commands x 2 seeds, rerun with a different thread cap: {} files ({csv_svg} CSV/SVG) byte-identical: {same}{}",
            ta.len(),
            if differing.is_empty() { String::new() } else { format!(" (first differing: {differing:?})") }
        ),
    )
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "gradient correctness", criterion_1),
        (2, "metric-oracle equivalence", criterion_2),
        (3, "score identities", criterion_3),
        (4, "mask contracts", criterion_4),
        (5, "UMAP weight preservation", criterion_5),
        (6, "UM objective law", criterion_6),
        (7, "phenomenon reproduction", criterion_7),
        (8, "UM / UMAP recovery", criterion_8),
        (9, "typical/atypical ablation", criterion_9),
        (10, "theory simulation", criterion_10),
        (11, "determinism", criterion_11),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {n:>2} {} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
