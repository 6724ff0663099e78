//! Acceptance gate: one line per criterion, nonzero exit if any fails.
//!
//! Every expected value here comes from a test-side oracle (closed-form
//! CDFs, Simpson integration, brute-force pair counting, central
//! differences), never from the library routine under test.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cpt_core::label::{self, ContrastiveLabel, LabelVariant};
use cpt_core::loss;
use cpt_core::model::{logistic, DualHeadModel, ModelConfig};
use cpt_core::synth::{Interaction, Population, PopulationConfig};
use cpt_core::trainer::{self, Target, TrainConfig, Trainer, Variant};
use cpt_core::user_state::{PoolEntry, UserState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, LogNormal as LogNormalCdf};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within_budget(start: Instant, budget: Duration) -> (bool, String) {
    let took = start.elapsed();
    (took < budget, format!("{:.1}s of {}s", took.as_secs_f64(), budget.as_secs()))
}

fn bce(p: f64, target: f64) -> f64 {
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// All-pairs AUC with half credit for ties.
fn brute_auc(items: &[(f64, bool)]) -> Option<f64> {
    let (mut credit, mut pairs) = (0.0, 0u64);
    for &(sp, _) in items.iter().filter(|i| i.1) {
        for &(sn, _) in items.iter().filter(|i| !i.1) {
            pairs += 1;
            credit += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let draws = 10_000;
    let (mut within, mut cells) = (0, 0);
    for u in 0..20 {
        let mu = -0.5 + 0.2 * u as f64;
        let sigma = 0.5 + 0.05 * u as f64;
        let cdf = LogNormalCdf::new(mu, sigma).unwrap();
        let dist = LogNormal::new(mu, sigma).unwrap();
        for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let y = cdf.inverse_cdf(q);
            let p = cdf.cdf(y);
            let mut hits = 0.0;
            for _ in 0..draws {
                let pool: Vec<PoolEntry> = (0..8).map(|_| PoolEntry::magnitude(dist.sample(&mut rng))).collect();
                hits += label::single_sample_label(y, &pool, &mut rng).unwrap().value;
            }
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            cells += 1;
            if (hits / draws as f64 - p).abs() <= 3.0 * sd {
                within += 1;
            }
        }
    }
    let frac = within as f64 / cells as f64;
    let (fast, time) = within_budget(start, Duration::from_secs(30));
    outcome(frac >= 0.95 && fast, format!("{within}/{cells} cells within 3 sd ({frac:.3} >= 0.95); {time}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [5usize, 10, 50] {
        let (mut multi, mut single) = (Vec::new(), Vec::new());
        for _ in 0..10_000 {
            let pool: Vec<PoolEntry> = (0..n).map(|_| PoolEntry::magnitude(rng.random())).collect();
            multi.push(label::multi_sample_label(0.5, &pool).unwrap().value);
            single.push(label::single_sample_label(0.5, &pool, &mut rng).unwrap().value);
        }
        let ratio = variance(&multi) / variance(&single);
        let lo = 0.8 / n as f64;
        let hi = 1.2 / n as f64;
        ok &= (lo..=hi).contains(&ratio);
        parts.push(format!("N={n}: {ratio:.5} in [{lo:.4}, {hi:.4}]"));
    }
    let (fast, time) = within_budget(start, Duration::from_secs(30));
    outcome(ok && fast, format!("{}; {time}", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut worst_m, mut worst_v) = (0.0f64, 0.0f64);
    for _ in 0..100_000 {
        let n = rng.random_range(1..=50);
        let pool: Vec<f64> = (0..n).map(|_| (1.2 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        let entries: Vec<PoolEntry> = pool.iter().map(|&m| PoolEntry::magnitude(m)).collect();
        let y = (1.2 * rng.sample::<f64, _>(StandardNormal)).exp();
        let p = rng.random_range(1e-3..1.0 - 1e-3);
        // Per-term mean over pairs, computed here from the definition.
        let per_term = pool.iter().map(|&r| bce(p, f64::from(u8::from(y > r)))).sum::<f64>() / n as f64;
        let soft = loss::soft_bce(p, label::multi_sample_label(y, &entries).unwrap().value).unwrap().loss;
        worst_m = worst_m.max((per_term - soft).abs());
        let total: f64 = pool.iter().sum();
        let weighted = pool.iter().map(|&r| r / total * bce(p, f64::from(u8::from(y > r)))).sum::<f64>();
        let soft_w = loss::soft_bce(p, label::value_weighted_label(y, &entries).unwrap().value).unwrap().loss;
        worst_v = worst_v.max((weighted - soft_w).abs());
    }
    let (fast, time) = within_budget(start, Duration::from_secs(10));
    outcome(
        worst_m < 1e-12 && worst_v < 1e-12 && fast,
        format!("max |diff| multi {worst_m:.2e}, value-weighted {worst_v:.2e} (< 1e-12); {time}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let step = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p_bar: f64 = rng.random();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=10_000 {
            let p = i as f64 * step;
            let l = loss::soft_bce(p, p_bar).unwrap().loss;
            if l < best.0 {
                best = (l, p);
            }
        }
        worst = worst.max((best.1 - p_bar).abs());
    }
    outcome(worst <= step + 1e-12, format!("max |argmin - label| = {worst:.2e} (<= {step:e})"))
}

/// SGD on a free logit against fresh Uniform(0, 1) pools of 50; returns the
/// Polyak average of p over the second half.
fn fit_scalar(y: f64, rng: &mut ChaCha8Rng) -> f64 {
    let steps = 20_000;
    let (mut theta, mut acc) = (0.0f64, 0.0);
    for t in 0..steps {
        let pool: Vec<PoolEntry> = (0..50).map(|_| PoolEntry::magnitude(rng.random())).collect();
        let p = logistic(theta);
        let g = loss::vwbce(p, &pool, y).unwrap().d_phat * p * (1.0 - p);
        theta -= 2.0 / (1.0 + t as f64 / 500.0).powf(0.6) * g;
        if t >= steps / 2 {
            acc += logistic(theta);
        }
    }
    acc / (steps / 2) as f64
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut ok = true;
    let mut parts = Vec::new();
    for y in [0.6, 0.2, 0.5, 0.9] {
        let oracle = simpson(|t| t, 0.0, y, 2_000) / simpson(|t| t, 0.0, 1.0, 2_000);
        let fitted = fit_scalar(y, &mut rng);
        ok &= (fitted - oracle).abs() <= 0.02;
        parts.push(format!("y={y}: {fitted:.4} vs {oracle:.4}"));
    }
    let (fast, time) = within_budget(start, Duration::from_secs(60));
    outcome(ok && fast, format!("{} (tol 0.02); {time}", parts.join(", ")))
}

fn criterion_6() -> Outcome {
    let (reps, m, n) = (10_000u64, 1_000usize, 50usize);
    let mut counts = vec![0u64; m];
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(106_000 + r);
        let mut state = UserState::new(n);
        for i in 0..m {
            state.reservoir_update(PoolEntry::magnitude(i as f64), &mut rng);
        }
        for e in state.pool() {
            counts[e.magnitude as usize] += 1;
        }
    }
    let q = n as f64 / m as f64;
    let e = reps as f64 * q;
    let stat = counts.iter().map(|&c| (c as f64 - e).powi(2)).sum::<f64>() / (e * (1.0 - q)) * (m as f64 - 1.0)
        / m as f64;
    let p = 1.0 - ChiSquared::new(m as f64 - 1.0).unwrap().cdf(stat);
    outcome(p > 0.001, format!("chi2 = {stat:.1} on {} df, p = {p:.4} (> 0.001)", m - 1))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for t in 0..100 {
        let dim = rng.random_range(2..=6);
        let model = DualHeadModel::new(&ModelConfig { input_dim: dim, hidden: vec![rng.random_range(2..=8)], seed: t })
            .unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let y = rng.sample::<f64, _>(StandardNormal).exp();
        let lbl = ContrastiveLabel {
            value: rng.random(),
            variant: LabelVariant::Multi,
            gate_open: true,
            sample_count: 10,
            fallback: false,
        };
        let f = |m: &DualHeadModel| {
            let (y_hat, p_hat) = m.predict(&x);
            (y_hat.ln_1p() - y.ln_1p()).powi(2) + bce(p_hat, lbl.value)
        };
        let pass = model.forward(&x);
        let out = loss::cotrain_loss(pass.y_hat, y, pass.p_hat, &lbl, 1.0).unwrap();
        let g = model.backward(&pass, out.d_yhat, out.d_phat).flatten();
        let base = model.parameters().flatten();
        for i in 0..base.len() {
            let mut probe = model.clone();
            let mut v = base.clone();
            v[i] += h;
            probe.parameters_mut().set_flat(&v);
            let plus = f(&probe);
            v[i] -= 2.0 * h;
            probe.parameters_mut().set_flat(&v);
            let numeric = (plus - f(&probe)) / (2.0 * h);
            worst = worst.max((g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(1e-6));
        }
    }

    // Gated steps through the real trainer: the percentile head must not move.
    let pop = Population::new(PopulationConfig { users: 30, stream_length: 2_000, ..PopulationConfig::default() })
        .unwrap();
    let stream: Vec<Interaction> = pop.stream().collect();
    let mut trainer = Trainer::new(TrainConfig { variant: Variant::Cotrain, ..TrainConfig::default() }, 6).unwrap();
    let (mut gated, mut moved) = (0, 0);
    for it in &stream {
        let before = trainer.model().parameters().pct_head.clone();
        let rec = trainer.step(it).unwrap();
        if !rec.gate_open {
            gated += 1;
            let after = &trainer.model().parameters().pct_head;
            moved += before.weights.iter().chain(&before.bias).zip(after.weights.iter().chain(&after.bias))
                .filter(|(a, b)| a.to_bits() != b.to_bits())
                .count();
        }
    }
    outcome(
        worst < 1e-4 && moved == 0 && gated > 0,
        format!("max rel err {worst:.2e} (< 1e-4); {gated} gated steps, {moved} percentile-head bits changed"),
    )
}

fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

fn criterion_8() -> Outcome {
    let mut config = PopulationConfig::default();
    config.cohorts.iter_mut().for_each(|c| c.positive_rate = 0.0);
    let pop = Population::new(config.clone()).unwrap();
    let stream: Vec<Interaction> = pop.stream().collect();
    assert!(stream.iter().all(|it| it.b == 0));
    let dim = config.feature_dim();
    let base = TrainConfig { target: Target::Binary, ..TrainConfig::default() };
    let raw = trainer::train(&stream, &TrainConfig { variant: Variant::Multi, ..base.clone() }, dim).unwrap();
    let raw_labels: Vec<f64> = raw.log.iter().filter_map(|r| r.label).collect();
    let boot = trainer::train(&stream, &TrainConfig { variant: Variant::Bootstrapped, ..base }, dim).unwrap();
    let boot_labels: Vec<f64> = boot.log.iter().filter_map(|r| r.label).collect();

    let eval = pop.eval_set();
    let mut per_user = Vec::new();
    for user in pop.users() {
        let mine: Vec<&Interaction> = eval.iter().filter(|it| it.user_id == user.id).collect();
        let mut aff: Vec<f64> = mine.iter().map(|it| it.affinity).collect();
        aff.sort_by(f64::total_cmp);
        let median = aff[aff.len() / 2];
        let items: Vec<(f64, bool)> =
            mine.iter().map(|it| (boot.model.predict(&it.features).1, it.affinity >= median)).collect();
        per_user.extend(brute_auc(&items));
    }
    let uauc = per_user.iter().sum::<f64>() / per_user.len() as f64;
    let constant = raw_labels.iter().all(|&l| l == 0.0);
    let spread = sd(&boot_labels);
    outcome(
        constant && spread > 0.0 && uauc >= 0.55,
        format!(
            "raw labels constant 0: {constant} ({} labels); bootstrapped label sd {spread:.4}; percentile-head UAUC {uauc:.4} (>= 0.55, pilot 0.7485)",
            raw_labels.len()
        ),
    )
}

fn cpt(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cpt"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    cpt(&["simulate"], dir)?;
    cpt(&["train"], dir)?;
    cpt(&["eval"], dir)
}

/// `(value, baseline value)` for the magnitude target in `cohort`.
fn report_row(dir: &Path, cohort: &str) -> Option<(f64, f64)> {
    let csv = std::fs::read_to_string(dir.join("report.csv")).ok()?;
    csv.lines().skip(1).find_map(|line| {
        let f: Vec<&str> = line.split(',').collect();
        (f[0] == "magnitude" && f[2] == cohort).then(|| {
            let v: f64 = f[3].parse().unwrap();
            let d: f64 = f[6].parse().unwrap();
            (v, v - d)
        })
    })
}

fn criterion_9(dir: &Path) -> Outcome {
    let start = Instant::now();
    if let Err(e) = pipeline(dir) {
        return outcome(false, format!("pipeline failed: {e}"));
    }
    let (Some(low), Some(high)) = (report_row(dir, "non_live"), report_row(dir, "high")) else {
        return outcome(false, "report rows missing");
    };
    let gain_low = low.0 - low.1;
    let gain_high = high.0 - high.1;
    let (fast, time) = within_budget(start, Duration::from_secs(600));
    outcome(
        gain_low > gain_high && (low.1 - 0.5).abs() <= 0.03 && fast,
        format!(
            "non_live {:.4} vs twin {:.4} (gain {gain_low:+.4}); high {:.4} vs twin {:.4} (gain {gain_high:+.4}); twin non_live |{:.4} - 0.5| <= 0.03; {time}",
            low.0, low.1, high.0, high.1, low.1
        ),
    )
}

fn criterion_10(first: &Path, second: &Path) -> Outcome {
    if let Err(e) = pipeline(second) {
        return outcome(false, format!("second run failed: {e}"));
    }
    let files = [
        "stream.jsonl",
        "eval.jsonl",
        "oracle.csv",
        "checkpoint.bin",
        "baseline_checkpoint.bin",
        "state.bin",
        "train_log.jsonl",
        "report.csv",
        "report.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(first.join(f)).ok() != std::fs::read(second.join(f)).ok() || !first.join(f).exists())
        .collect();
    outcome(differing.is_empty(), format!("{} files compared, differing: {differing:?}", files.len()))
}

fn main() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("single-sample unbiasedness", Box::new(criterion_1)),
        ("multi-sample variance reduction", Box::new(criterion_2)),
        ("per-term / soft-label identity", Box::new(criterion_3)),
        ("soft BCE minimizer", Box::new(criterion_4)),
        ("value-weighted optimum", Box::new(criterion_5)),
        ("reservoir uniformity", Box::new(criterion_6)),
        ("gradient correctness", Box::new(criterion_7)),
        ("bootstrapped non-degeneracy", Box::new(criterion_8)),
        ("cohort pattern vs regression twin", Box::new(|| criterion_9(first.path()))),
        ("determinism", Box::new(|| criterion_10(first.path(), second.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.passed);
        println!("criterion {:>2} {:<34} {}  {}", i + 1, name, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
