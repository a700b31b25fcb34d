//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout.
//! Criterion 8 needs user-supplied data and is skipped unless
//! `ROLECLUSTER_EXTERNAL_CORPUS` (and optionally `ROLECLUSTER_EXTERNAL_EMBEDDINGS`
//! and `ROLECLUSTER_EXTERNAL_LEXICON`) are set.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rolecluster::cluster::{
    aggregate_roles, constant_temperature, inter_loss, intra_loss, soft_assign,
};
use rolecluster::data::{load_corpus, Split};
use rolecluster::model::Variant;
use rolecluster::report::{self, Table};
use rolecluster::sentiment::load_lexicon;
use rolecluster::synthetic::{bundled_corpus, bundled_lexicon};
use rolecluster::tensor::{Tape, Tensor};
use rolecluster::train::{sweep, EpochRecord, SweepParam, TrainConfig, Trainer};
use rolecluster::verify;

type Outcome = Result<String, String>;

/// Status of one criterion: `Ok(detail)` passes, `Err(detail)` fails.
struct Line {
    id: u8,
    title: &'static str,
    gating: bool,
    outcome: Outcome,
    elapsed: Duration,
}

fn run(id: u8, title: &'static str, gating: bool, f: impl FnOnce() -> Outcome) -> Line {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
    let line = Line {
        id,
        title,
        gating,
        outcome,
        elapsed: start.elapsed(),
    };
    let (tag, detail) = match &line.outcome {
        Ok(d) if d.starts_with("SKIP") => ("SKIP", d.as_str()),
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!(
        "criterion {} [{tag}] {} ({:.1}s): {detail}",
        line.id,
        line.title,
        line.elapsed.as_secs_f64()
    );
    line
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let checks = verify::gradient_suite(2024).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
        .expect("suite is non-empty");
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    check(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, worst {} = {:.2e}, failed {:?}, {secs:.1}s",
            checks.len(),
            worst.name,
            worst.max_error,
            failed
        ),
    )
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Q and C_K computed with plain loops.
fn oracle(x: &[Vec<f64>], m: &[Vec<f64>], tau: f64, mask: &[bool]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xn: Vec<_> = x.iter().map(|r| unit(r)).collect();
    let mn: Vec<_> = m.iter().map(|r| unit(r)).collect();
    let q: Vec<Vec<f64>> = xn
        .iter()
        .map(|xi| {
            let logits: Vec<f64> = mn.iter().map(|mk| tau * dot(xi, mk)).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect();
    let d = x[0].len();
    let mut c = vec![0.0; m.len() * d];
    for k in 0..m.len() {
        for (j, xj) in xn.iter().enumerate() {
            if mask[j] {
                for t in 0..d {
                    c[k * d + t] += q[j][k] * xj[t];
                }
            }
        }
    }
    (q, c)
}

fn clustering_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = [0.0f64; 3];
    let mut s_range = (f64::INFINITY, f64::NEG_INFINITY);
    for draw in 0..1000 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=8);
        let k = rng.random_range(2..=6);
        let tau = rng.random_range(0.1..20.0);
        let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let x: Vec<Vec<f64>> = (0..n).map(|_| row(&mut rng)).collect();
        let m: Vec<Vec<f64>> = (0..k).map(|_| row(&mut rng)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        mask[0] = true;
        let scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..100.0)).collect();

        let tensor = |rows: &[Vec<f64>]| {
            Tensor::<f64>::from_f64(rows.len(), d, &rows.concat()).expect("rectangular")
        };
        let tape = Tape::<f64>::new();
        let a = soft_assign(
            tape.constant(tensor(&x)),
            tape.constant(tensor(&m)),
            constant_temperature(&tape, tau),
        )
        .map_err(|e| format!("draw {draw}: {e}"))?;
        let c = aggregate_roles(&a, &mask, n).map_err(|e| e.to_string())?;
        let scaled: Vec<Vec<f64>> = x
            .iter()
            .zip(&scales)
            .map(|(r, s)| r.iter().map(|v| v * s).collect())
            .collect();
        let b = soft_assign(
            tape.constant(tensor(&scaled)),
            tape.constant(tensor(&m)),
            constant_temperature(&tape, tau),
        )
        .map_err(|e| e.to_string())?;

        let q = a.assignment.value().clone();
        for r in 0..n {
            let sum: f64 = q.row_slice(r).iter().sum();
            worst[0] = worst[0].max((sum - 1.0).abs());
        }
        for &s in a.similarity.value().data() {
            s_range = (s_range.0.min(s), s_range.1.max(s));
        }
        let (_, c_oracle) = oracle(&x, &m, tau, &mask);
        for (got, want) in c.value().data().iter().zip(&c_oracle) {
            worst[1] = worst[1].max((got - want).abs());
        }
        worst[2] = worst[2].max(q.max_abs_diff(&b.assignment.value()));
    }
    let ok = worst.iter().all(|&w| w <= 1e-6)
        && s_range.0 >= -1.0 + 1e-9
        && s_range.1 <= 1.0 - 1e-9;
    check(
        ok,
        format!(
            "1000 draws: |row sum - 1| {:.1e}, S in [{:.6}, {:.6}], C_K vs loops {:.1e}, scale {:.1e}",
            worst[0], s_range.0, s_range.1, worst[1], worst[2]
        ),
    )
}

fn loss_extremes() -> Outcome {
    let tape = Tape::<f64>::new();
    let eye = Tensor::<f64>::identity(3);
    let aligned = soft_assign(
        tape.constant(eye.clone()),
        tape.constant(eye.clone()),
        constant_temperature(&tape, 1e3),
    )
    .map_err(|e| e.to_string())?;
    let intra = intra_loss(&aligned, &[true; 3]).map_err(|e| e.to_string())?.value().item();
    let inter = |rows: &[f64], k: usize| -> Result<f64, String> {
        let t = tape.constant(Tensor::from_f64(k, rows.len() / k, rows).map_err(|e| e.to_string())?);
        Ok(inter_loss(t.l2_normalize_rows().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
            .value()
            .item())
    };
    let orthogonal = inter(eye.data(), 3)?;
    let antipodal = inter(&[0.6, 0.8, -0.6, -0.8], 2)?;
    let identical = inter(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 3)?;
    let ok = (intra + 1.0).abs() <= 1e-6
        && orthogonal.abs() <= 1e-6
        && (antipodal + 1.0).abs() <= 1e-6
        && (identical - 1.0).abs() <= 1e-6;
    check(
        ok,
        format!(
            "intra(aligned) {intra:.9}, inter orthogonal {orthogonal:.9}, antipodal {antipodal:.9}, identical {identical:.9}"
        ),
    )
}

fn reference_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn overfit() -> Outcome {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let mut reached = Vec::new();
    for seed in 0..10 {
        let mut t = Trainer::<f32>::new(
            TrainConfig {
                epochs: 200,
                ..reference_config(seed)
            },
            &labels,
            &corpus,
            &lex,
            None,
        )
        .map_err(|e| e.to_string())?;
        let mut hit = None;
        while t.epoch() < 200 {
            let r = t.train_epoch().map_err(|e| e.to_string())?;
            if r.train.metrics.accuracy >= 0.95 {
                hit = Some(r.epoch);
                break;
            }
        }
        reached.push(hit);
    }
    let ok = reached.iter().filter(|h| h.is_some()).count();
    check(
        ok >= 9,
        format!("{ok}/10 seeds reach train accuracy >= 0.95; epochs needed {reached:?}"),
    )
}

const ABLATION_EPOCHS: usize = 5;

fn ablation() -> Outcome {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let mut means = Vec::new();
    for v in Variant::ALL {
        let mut total = 0.0;
        for seed in 0..10 {
            let mut cfg = reference_config(seed);
            cfg.epochs = ABLATION_EPOCHS;
            cfg.model.variant = v;
            let mut t = Trainer::<f32>::new(cfg, &labels, &corpus, &lex, None)
                .map_err(|e| e.to_string())?;
            t.fit().map_err(|e| e.to_string())?;
            let last: &EpochRecord = t.history().last().expect("history");
            total += last.validation.metrics.f1;
        }
        means.push((v, total / 10.0));
    }
    let full = means[0].1;
    let ok = means[1..].iter().all(|&(_, f)| full >= f - 0.02);
    let detail = means
        .iter()
        .map(|(v, f)| format!("{v} {f:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        ok,
        format!("mean validation F1 over 10 seeds, {ABLATION_EPOCHS} epochs: {detail}"),
    )
}

const SWEEP_EPOCHS: usize = 3;

fn sweep_harness() -> Outcome {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = TrainConfig {
        epochs: SWEEP_EPOCHS,
        ..reference_config(7)
    };
    let mut alpha_zero_history = None;
    let mut summaries = Vec::new();
    for param in [SweepParam::K, SweepParam::Alpha] {
        let values = param.default_values();
        let rows = sweep::<f32>(&base, param, &values, &labels, &corpus, &lex, None, |v, t| {
            if param == SweepParam::Alpha && v == 0.0 {
                alpha_zero_history = Some(report::epoch_table(t.history()));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("sweep_{}.csv", param.name()));
        let table = report::sweep_table(param, &rows);
        table.write(&path).map_err(|e| e.to_string())?;
        let back = Table::from_csv(&std::fs::read_to_string(&path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if back != table || back.rows.len() != values.len() {
            return Err(format!("{} table did not round-trip", param.name()));
        }
        summaries.push(format!("{} rows for {}", rows.len(), param.name()));
        if param == SweepParam::Alpha {
            let mut cfg = base.clone();
            cfg.model.variant = Variant::ClsLossOnly;
            let mut t = Trainer::<f32>::new(cfg, &labels, &corpus, &lex, None)
                .map_err(|e| e.to_string())?;
            t.fit().map_err(|e| e.to_string())?;
            let val = t.evaluate_best(Split::Validation).map_err(|e| e.to_string())?.metrics;
            let test = t.evaluate_best(Split::Test).map_err(|e| e.to_string())?.metrics;
            let zero = &rows[0];
            let same_metrics = zero.validation == val && zero.test == test;
            let same_history = alpha_zero_history.as_ref() == Some(&report::epoch_table(t.history()));
            if !(same_metrics && same_history) {
                return Err(format!(
                    "alpha=0 row differs from cls_loss_only (metrics equal: {same_metrics}, history equal: {same_history})"
                ));
            }
            summaries.push("alpha=0 row bit-equal to cls_loss_only".into());
        }
    }
    Ok(format!("{SWEEP_EPOCHS} epochs per value; {}", summaries.join("; ")))
}

fn determinism_and_resume() -> Outcome {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let cfg = TrainConfig {
        epochs: 3,
        ..reference_config(11)
    };
    let train = || -> Result<Trainer<f32>, String> {
        let mut t = Trainer::<f32>::new(cfg.clone(), &labels, &corpus, &lex, None)
            .map_err(|e| e.to_string())?;
        t.fit().map_err(|e| e.to_string())?;
        Ok(t)
    };
    let csv = |t: &Trainer<f32>| report::epoch_table(t.history()).to_csv().expect("csv");
    let a = train()?;
    let b = train()?;
    let same_runs = csv(&a) == csv(&b);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("mid.ckpt");
    let mut c = Trainer::<f32>::new(cfg.clone(), &labels, &corpus, &lex, None)
        .map_err(|e| e.to_string())?;
    c.train_epoch().map_err(|e| e.to_string())?;
    c.train_epoch().map_err(|e| e.to_string())?;
    c.save_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    drop(c);
    let mut resumed = Trainer::<f32>::resume(&ckpt, &labels, &corpus, &lex).map_err(|e| e.to_string())?;
    resumed.fit().map_err(|e| e.to_string())?;
    let bits = |t: &Trainer<f32>| -> Vec<u32> {
        t.params()
            .named()
            .iter()
            .flat_map(|(_, p)| p.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    let same_resume = csv(&a) == csv(&resumed) && bits(&a) == bits(&resumed);
    check(
        same_runs && same_resume,
        format!("repeat run identical: {same_runs}; resume after epoch 2 identical: {same_resume}"),
    )
}

fn external_corpus() -> Outcome {
    let Some(corpus_path) = std::env::var_os("ROLECLUSTER_EXTERNAL_CORPUS").map(PathBuf::from) else {
        return Ok("SKIP: set ROLECLUSTER_EXTERNAL_CORPUS to run".into());
    };
    let embeddings = std::env::var_os("ROLECLUSTER_EXTERNAL_EMBEDDINGS").map(PathBuf::from);
    let (labels, corpus) = load_corpus(&corpus_path).map_err(|e| e.to_string())?;
    let lex = match std::env::var_os("ROLECLUSTER_EXTERNAL_LEXICON") {
        Some(p) => load_lexicon(PathBuf::from(p), 0.05, -0.05).map_err(|e| e.to_string())?.0,
        None => bundled_lexicon(),
    };
    let mut t = Trainer::<f32>::new(TrainConfig::default(), &labels, &corpus, &lex, embeddings.as_deref())
        .map_err(|e| e.to_string())?;
    t.fit().map_err(|e| e.to_string())?;
    let m = t.evaluate_best(Split::Test).map_err(|e| e.to_string())?.metrics;
    Ok(format!(
        "20 epochs on {}: test macro-F1 {:.4}, RMSE {:.4} (no tolerance asserted)",
        corpus_path.display(),
        m.macro_f1,
        m.rmse
    ))
}

fn main() {
    // `cargo test -- <filter>` passes extra arguments; a filter that does not
    // mention this suite skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let lines = [
        run(1, "gradient fidelity", true, gradient_fidelity),
        run(2, "clustering algebra", true, clustering_algebra),
        run(3, "loss extremes", true, loss_extremes),
        run(4, "overfit capability", true, overfit),
        run(5, "ablation ordering echo", true, ablation),
        run(6, "sweep harness", true, sweep_harness),
        run(7, "determinism and checkpointing", true, determinism_and_resume),
        run(8, "external corpus harness", false, external_corpus),
    ];
    let failed: Vec<u8> = lines
        .iter()
        .filter(|l| l.gating && l.outcome.is_err())
        .map(|l| l.id)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
