//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use latent_scalpel::attention::{attention_delta, section_shares, SectionShares};
use latent_scalpel::detect::{auroc, calibrate_threshold, confusion, f1_score, ScoredSample};
use latent_scalpel::harness::{PromptSpans, Span};
use latent_scalpel::intervene::{binomial_test_greater, coefficient_search, make_steer_hook, SearchConfig};
use latent_scalpel::lm::*;
use latent_scalpel::pipeline::{run_all, run_command, RunConfig};
use latent_scalpel::sae::{decode, encode, sae_loss};
use latent_scalpel::select::{frequencies_and_separation, welch_t, TStatCounts};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

/// State shared between criteria: the first full pipeline run is reused by the transfer check.
#[derive(Default)]
struct Ctx {
    run_a: Option<tempfile::TempDir>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol})"))
}

fn f1_anchors(_: &mut Ctx) -> Outcome {
    let a = f1_score(0.703, 0.985);
    let b = f1_score(0.362, 0.828);
    close(a, 0.821, 1e-3, "F1(0.703, 0.985)")?;
    close(b, 0.504, 1e-3, "F1(0.362, 0.828)")?;
    Ok(format!("{a:.4}, {b:.4}"))
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    let v: Array1<f64> = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
    let n = v.dot(&v).sqrt();
    v / n
}

fn tiny_checkpoint(seed: u64) -> Checkpoint {
    Checkpoint::init(ModelConfig {
        n_layers: 3,
        d_model: 8,
        n_heads: 2,
        vocab_size: 20,
        max_seq_len: 16,
        rng_seed: seed,
    })
    .unwrap()
}

fn oracles(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);

    for case in 0..150 {
        let (d, s) = (rng.gen_range(1..8), rng.gen_range(1..20));
        let sae = common::random_sae(&mut rng, d, s);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = rng.gen_range(0.0..1.0);
        let (a_ref, r_ref, loss_ref) = common::sae_oracle(&x, &sae, lambda);
        let xv = Array1::from(x);
        let a = encode(xv.view(), &sae);
        let r = decode(a.view(), &sae);
        for (u, v) in a.iter().zip(&a_ref).chain(r.iter().zip(&r_ref)) {
            close(*u, *v, 1e-9, &format!("sae case {case}"))?;
        }
        close(sae_loss(xv.view(), &sae, lambda).total, loss_ref, 1e-9 * loss_ref.abs().max(1.0), "sae loss")?;
    }

    let mut t_cases = 0;
    let mut sep_cases = 0;
    while t_cases < 150 || sep_cases < 150 {
        let n = rng.gen_range(4..60);
        let density = rng.gen_range(0.1..0.9);
        let ds = common::random_dataset(&mut rng, n, 6, density);
        for j in 0..ds.n_latents() {
            for counts in [TStatCounts::Total, TStatCounts::Nonzero] {
                match (welch_t(&ds, j, counts), common::t_oracle(&ds, j, counts)) {
                    (Some((t, _)), Some(r)) => {
                        close(t, r, 1e-6 * r.abs().max(1.0), "welch t")?;
                        t_cases += 1;
                    }
                    (None, None) => {}
                    (a, b) => return Err(format!("t validity differs: {a:?} vs {b:?}")),
                }
            }
            let fired = |class: Label| {
                (0..n).filter(|&i| ds.labels[i] == class && ds.activations[[i, j]] > 0.0).count() as f64
            };
            let fc = fired(Label::Correct) / ds.n_correct as f64;
            let fi = fired(Label::Incorrect) / ds.n_incorrect as f64;
            let sep = frequencies_and_separation(&ds, j).map_err(|e| e.to_string())?;
            close(sep.f_correct, fc, 1e-9, "f_correct")?;
            close(sep.f_incorrect, fi, 1e-9, "f_incorrect")?;
            close(sep.s_correct, fc - fi, 1e-9, "s_correct")?;
            close(sep.s_incorrect, fi - fc, 1e-9, "s_incorrect")?;
            sep_cases += 1;
        }
    }

    for case in 0..120 {
        let ckpt = tiny_checkpoint(case);
        let layer = rng.gen_range(0..3);
        let d = random_unit(&mut rng, 8);
        let alpha = rng.gen_range(-50.0..50.0);
        let len = rng.gen_range(1..12);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..20)).collect();
        let steer = make_steer_hook(layer, &d, alpha, HookPositions::All).map_err(|e| e.to_string())?;
        let plain = forward(&ckpt, &tokens, &[HookSpec::capture(layer)]).map_err(|e| e.to_string())?;
        let steered = forward(&ckpt, &tokens, &[steer, HookSpec::capture(layer)]).map_err(|e| e.to_string())?;
        for (p, s) in plain.captures.iter().zip(&steered.captures) {
            for k in 0..8 {
                close(s.vector[k] - p.vector[k], alpha * d[k], 1e-9, "steering delta")?;
            }
        }
    }

    for case in 0..100 {
        let ckpt = tiny_checkpoint(1000 + case);
        let d = random_unit(&mut rng, 8);
        let out = orthogonalize_checkpoint(&ckpt, &d, "acceptance").map_err(|e| e.to_string())?;
        for ((_, before), (_, after)) in ckpt.weights.residual_writers().iter().zip(out.weights.residual_writers()) {
            for (rb, ra) in before.chunks_exact(8).zip(after.chunks_exact(8)) {
                let proj: f64 = (0..8).map(|k| rb[k] * d[k]).sum();
                for k in 0..8 {
                    close(ra[k], rb[k] - proj * d[k], 1e-9, "ortho projection")?;
                }
            }
        }
    }
    Ok(format!("sae 150, t {t_cases}, separation {sep_cases}, steering 120, ortho 100"))
}

fn ortho_invariants(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_write, mut worst_idem) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let ckpt = tiny_checkpoint(2000 + case);
        let d = random_unit(&mut rng, 8);
        let once = orthogonalize_checkpoint(&ckpt, &d, "a").map_err(|e| e.to_string())?;
        let twice = orthogonalize_checkpoint(&once, &d, "a").map_err(|e| e.to_string())?;
        worst_write = worst_write.max(max_write_component(&once, &d));
        for (a, b) in once.weights.tensors().iter().zip(twice.weights.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                worst_idem = worst_idem.max((x - y).abs());
            }
        }
    }
    ensure(worst_write <= 1e-6, || format!("max write component {worst_write:e}"))?;
    ensure(worst_idem <= 1e-6, || format!("idempotence gap {worst_idem:e}"))?;
    Ok(format!("max write {worst_write:.1e}, idempotence gap {worst_idem:.1e}"))
}

fn gradients(_: &mut Ctx) -> Outcome {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        vocab_size: 13,
        max_seq_len: 10,
        rng_seed: 5,
    };
    let w = Weights::init(&cfg);
    let data = vec![
        TrainingSequence::full(vec![0, 3, 7, 1, 12, 4, 4]),
        TrainingSequence {
            tokens: vec![0, 9, 2, 5, 11],
            loss_start: 3,
        },
    ];
    let (_, grads) = batch_loss_and_grad(&w, &cfg, &data);
    let h = 1e-5;
    let (mut worst, mut lm_checked) = (0.0f64, 0);
    for ti in 0..w.tensors().len() {
        for k in 0..w.tensors()[ti].len() {
            let mut plus = w.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = w.clone();
            minus.tensors_mut()[ti][k] -= h;
            let fd = (batch_loss(&plus, &cfg, &data) - batch_loss(&minus, &cfg, &data)) / (2.0 * h);
            let an = grads.tensors()[ti][k];
            let scale = fd.abs().max(an.abs());
            if scale > 1e-7 {
                let rel = (fd - an).abs() / scale;
                worst = worst.max(rel);
                ensure(rel < 1e-3, || format!("lm tensor {ti}[{k}]: fd {fd} analytic {an}"))?;
            } else {
                close(fd, an, 1e-7, "lm near-zero gradient")?;
            }
            lm_checked += 1;
        }
    }
    let (sae_checked, sae_total) = common::sae_gradient_check(3);
    ensure(sae_checked * 10 >= sae_total * 9, || format!("sae: only {sae_checked} of {sae_total} entries away from thresholds"))?;
    Ok(format!("lm {lm_checked} entries (worst rel {worst:.1e}), sae {sae_checked}/{sae_total}"))
}

fn planted(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let (dict, sae) = common::planted_setup();
    let out = common::planted_selection(&dict, &sae);
    let secs = start.elapsed().as_secs_f64();
    ensure(out.mean_abs_cosine >= 0.9, || format!("mean |cos| {:.3}", out.mean_abs_cosine))?;
    ensure(out.selected == out.planted, || {
        format!("selected latent {} but planted feature maps to {}", out.selected, out.planted)
    })?;
    ensure(secs < 600.0, || format!("took {secs:.0}s"))?;
    Ok(format!("mean |cos| {:.3}, latent {} selected, margin {:.2}", out.mean_abs_cosine, out.selected, out.margin))
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, levels: i32) -> Vec<ScoredSample> {
    let mut v: Vec<ScoredSample> = (0..n)
        .map(|i| ScoredSample {
            problem_id: i as u64,
            score: rng.gen_range(0..levels) as f64 * 0.5,
            label: if rng.gen_bool(0.4) { Label::Incorrect } else { Label::Correct },
        })
        .collect();
    v[0].label = Label::Incorrect;
    v[1].label = Label::Correct;
    v
}

fn statistics(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(1..120);
        let k = rng.gen_range(0..=n);
        let b = rng.gen_range(2..64u64);
        let a = rng.gen_range(1..b);
        let got = binomial_test_greater(k, n, a as f64 / b as f64);
        let want = common::binomial_tail_exact(k, n, a, b);
        worst = worst.max((got - want).abs());
        close(got, want, 1e-12, &format!("binomial k {k} n {n} p {a}/{b}"))?;
    }
    for _ in 0..300 {
        let n = rng.gen_range(2..40);
        let levels = rng.gen_range(1..8);
        let samples = random_samples(&mut rng, n, levels);
        for positive in [Label::Incorrect, Label::Correct] {
            let (mut twice_wins, mut pairs) = (0u64, 0u64);
            for p in samples.iter().filter(|s| s.label == positive) {
                for q in samples.iter().filter(|s| s.label != positive) {
                    pairs += 1;
                    twice_wins += u64::from(p.score > q.score) * 2 + u64::from(p.score == q.score);
                }
            }
            let want = twice_wins as f64 / (2 * pairs) as f64;
            let got = auroc(&samples, positive).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("auroc {got} vs pair count {want}"))?;
        }
        let tau = calibrate_threshold(&samples, Label::Incorrect).map_err(|e| e.to_string())?;
        let best = confusion(&samples, tau, Label::Incorrect).f1();
        let cuts = samples.iter().map(|s| s.score).chain([f64::NEG_INFINITY]);
        for c in cuts {
            let f = confusion(&samples, c, Label::Incorrect).f1();
            ensure(f <= best, || format!("cut {c} gives F1 {f} above calibrated {best}"))?;
        }
    }
    Ok(format!("binomial 500 (worst {worst:.1e}), auroc 600 exact, calibration 300"))
}

fn search(_: &mut Ctx) -> Outcome {
    let out = coefficient_search(|a| Ok(-(a - 29.3f64).powi(2)), &SearchConfig::default()).map_err(|e| e.to_string())?;
    ensure(out.alpha == 29.0, || format!("29.3 peak gave {}", out.alpha))?;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..200 {
        let peak = rng.gen_range(0.0..300.0);
        let width = rng.gen_range(5.0..80.0);
        let power = rng.gen_range(1.0..3.0);
        let out = coefficient_search(|a| Ok(-((a - peak).abs() / width).powf(power)), &SearchConfig::default())
            .map_err(|e| e.to_string())?;
        ensure((out.alpha - peak).abs() <= 1.0, || format!("peak {peak} found {}", out.alpha))?;
    }
    let out = coefficient_search(|a| Ok(-(a - 141.7f64).powi(2)), &SearchConfig::default()).map_err(|e| e.to_string())?;
    ensure(out.brackets.len() > 3, || "too few brackets".into())?;
    let mut worst = 0.0f64;
    for w in out.brackets.windows(2) {
        let ratio = (w[1].1 - w[1].0) / (w[0].1 - w[0].0);
        worst = worst.max((ratio - 0.618).abs());
    }
    ensure(worst <= 1e-3, || format!("bracket ratio off by {worst}"))?;
    Ok(format!("29.3 -> 29, 200 peaks within 1, ratio error {worst:.1e}"))
}

fn spans(d: usize, t: usize, i: usize) -> PromptSpans {
    PromptSpans {
        description: Span { start: 1, end: 1 + d },
        tests: Span { start: 1 + d, end: 1 + d + t },
        initiator: Span { start: 1 + d + t, end: 1 + d + t + i },
    }
}

fn attention(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut base = Vec::new();
    let mut steered = Vec::new();
    for id in 0..200u64 {
        let (d, t, i) = (rng.gen_range(1..20), rng.gen_range(1..20), rng.gen_range(1..5));
        let ctx = 1 + d + t + i;
        let heads = rng.gen_range(1..6);
        let mut w = Array2::from_shape_fn((heads, ctx), |_| rng.gen_range(0.0..1.0f64));
        for mut row in w.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let trace = AttentionTrace { layer: 0, query_position: ctx - 1, weights: w };
        let s = section_shares(&trace, &spans(d, t, i)).map_err(|e| e.to_string())?;
        close(s.sum(), 100.0, 1e-6, "share sum")?;

        let uniform = AttentionTrace {
            layer: 0,
            query_position: ctx - 1,
            weights: Array2::from_elem((heads, ctx), 1.0 / ctx as f64),
        };
        let u = section_shares(&uniform, &spans(d, t, i)).map_err(|e| e.to_string())?;
        for (got, len) in u.as_array().iter().zip([d, t, i]) {
            close(*got, 100.0 * len as f64 / (d + t + i) as f64, 1e-9, "uniform share")?;
        }
        base.push((id, s));
        steered.push((id, u));
    }
    let ab = attention_delta(&base, &steered).map_err(|e| e.to_string())?;
    let ba = attention_delta(&steered, &base).map_err(|e| e.to_string())?;
    ensure(ab.as_array().iter().zip(ba.as_array()).all(|(x, y)| *x == -y), || format!("{ab:?} vs {ba:?}"))?;
    let zero: SectionShares = attention_delta(&base, &base).map_err(|e| e.to_string())?;
    ensure(zero.as_array() == [0.0; 3], || "self delta is not zero".into())?;
    Ok("200 traces".into())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

/// Relative paths of every JSON and CSV file under `root`, sorted.
fn output_files(root: &Path) -> Vec<std::path::PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<std::path::PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("json" | "csv")) {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let path = entry?.path();
        let dest = to.join(path.file_name().unwrap());
        if path.is_dir() {
            copy_dir(&path, &dest)?;
        } else {
            std::fs::copy(&path, &dest)?;
        }
    }
    Ok(())
}

fn arm<'a>(suite: &'a Value, name: &str) -> Result<&'a Value, String> {
    suite["arms"]
        .as_array()
        .and_then(|arms| arms.iter().find(|a| a["name"] == name))
        .ok_or_else(|| format!("no {name} arm"))
}

const MAX_PIPELINE: Duration = Duration::from_secs(30 * 60);

fn full_pipeline(ctx: &mut Ctx) -> Outcome {
    let cfg = RunConfig::default();
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let mut times = Vec::new();
    for dir in [&a, &b] {
        let start = Instant::now();
        run_all(&cfg, dir.path()).map_err(|e| e.to_string())?;
        times.push(start.elapsed());
    }
    ensure(times.iter().all(|t| *t < MAX_PIPELINE), || format!("runtimes {times:?}"))?;

    let files = output_files(a.path());
    ensure(files == output_files(b.path()), || "runs wrote different file sets".into())?;
    for f in &files {
        let same = std::fs::read(a.path().join(f)).ok() == std::fs::read(b.path().join(f)).ok();
        ensure(same, || format!("{} differs between runs", f.display()))?;
    }

    let labels = read_json(&a.path().join("labels.json"))?;
    let d1 = labels["pass_rates"]["by_difficulty"]
        .as_array()
        .and_then(|rows| rows.iter().find(|r| r[0] == 1))
        .ok_or("no difficulty-1 pass rate")?;
    let rate1 = d1[1].as_f64().unwrap_or(0.0) / d1[2].as_f64().unwrap_or(f64::INFINITY);
    ensure(rate1 >= 0.6, || format!("difficulty-1 pass rate {rate1:.2}"))?;

    let steering = read_json(&a.path().join("steering.json"))?;
    ensure(steering["split"] == "analysis", || "steering not on the analysis split".into())?;
    let correct = arm(&steering["suite"], "correct_steering")?;
    let (dir_rate, ctl_rate) = (
        correct["direction"]["correction_rate"].as_f64().ok_or("no direction correction rate")?,
        correct["control"]["correction_rate"].as_f64().ok_or("no control correction rate")?,
    );
    let p = correct["direction"]["p_vs_control"]["correction"].as_f64().ok_or("no p-value vs control")?;
    ensure(dir_rate > ctl_rate, || format!("correction {dir_rate:.3} vs control {ctl_rate:.3}"))?;

    ctx.run_a = Some(a);
    Ok(format!(
        "{} files identical, difficulty-1 pass {rate1:.2}, correction {dir_rate:.3} vs control {ctl_rate:.3} (p {p:.3}), {:.0}s + {:.0}s",
        files.len(),
        times[0].as_secs_f64(),
        times[1].as_secs_f64()
    ))
}

/// Removes provenance labels, the only field that differs between base and tuned reports.
fn strip_provenance(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("provenance");
            m.values_mut().for_each(strip_provenance);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_provenance),
        _ => {}
    }
}

fn transfer(ctx: &mut Ctx) -> Outcome {
    let a = ctx.run_a.take().ok_or("needs the full pipeline run")?;
    let t = read_json(&a.path().join("transfer.json"))?;
    ensure(t["frozen"]["recalibrated"] == false, || "thresholds were recalibrated".into())?;
    let (base_det, tuned_det) = (t["base_detection"].as_array(), t["tuned_detection"].as_array());
    let (base_det, tuned_det) = base_det.zip(tuned_det).ok_or("detection reports missing")?;
    ensure(!tuned_det.is_empty() && tuned_det.len() == base_det.len(), || "incomplete tuned detection".into())?;
    let fields = ["layer", "index", "positive_class", "threshold", "precision", "recall", "f1", "auroc", "confusion"];
    for (b, r) in base_det.iter().zip(tuned_det) {
        ensure(fields.iter().all(|f| r.get(*f).is_some()), || format!("tuned report lacks fields: {r}"))?;
        ensure(r["threshold"] == b["threshold"], || "tuned threshold differs from calibrated".into())?;
    }
    ensure(t["tuned_provenance"].as_str().is_some_and(|p| p != t["base_provenance"]), || "tuned provenance".into())?;
    for name in ["correct_steering", "incorrect_steering"] {
        let r = arm(&t["tuned_steering"], name)?;
        ensure(r["direction"]["correction_rate"].is_number(), || format!("{name} lacks rates"))?;
    }

    let c = tempfile::tempdir().map_err(|e| e.to_string())?;
    copy_dir(a.path(), c.path()).map_err(|e| e.to_string())?;
    drop(a);
    let mut cfg = RunConfig::default();
    cfg.fine_tune.steps = 0;
    for cmd in ["fine-tune", "transfer"] {
        run_command(cmd, &cfg, c.path()).map_err(|e| e.to_string())?;
    }
    let mut z = read_json(&c.path().join("transfer.json"))?;
    strip_provenance(&mut z);
    for (base, tuned) in [
        ("base_detection", "tuned_detection"),
        ("base_steering", "tuned_steering"),
        ("base_pass_rates", "tuned_pass_rates"),
    ] {
        ensure(z[base] == z[tuned], || format!("zero-step fine-tune changed {tuned}"))?;
    }
    Ok(format!("{} frozen predictors, zero-step tune reproduces base", tuned_det.len()))
}

fn main() {
    let criteria: [(&str, fn(&mut Ctx) -> Outcome); 10] = [
        ("F1 anchors", f1_anchors),
        ("reference oracles", oracles),
        ("orthogonalization invariants", ortho_invariants),
        ("gradients vs central differences", gradients),
        ("planted feature recovery", planted),
        ("statistical tests", statistics),
        ("coefficient search", search),
        ("attention shares", attention),
        ("full pipeline", full_pipeline),
        ("transfer to fine-tuned model", transfer),
    ];
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut ctx))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2}: PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2}: FAIL {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    drop(ctx);
    if failed > 0 {
        std::process::exit(1);
    }
}
