//! Statistical self-checks for the estimators, losses, reservoir and
//! gradients. Each suite reports one or more [`Check`]s with the measured
//! value and the tolerance it was held to.
//!
//! `trials_scale < 1` shrinks trial counts for quick runs; tolerances that
//! depend on sample size widen by `1/sqrt(trials_scale)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, LogNormal as LogNormalCdf};

use crate::label::{self, contrast, ContrastiveLabel, LabelVariant};
use crate::loss;
use crate::model::{logistic, DualHeadModel, ModelConfig};
use crate::rng::{self, Purpose};
use crate::stats::variance;
use crate::user_state::{PoolEntry, UserState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Unbiasedness,
    VarianceReduction,
    Linearity,
    VwbceOptimum,
    ReservoirUniformity,
    GradientCheck,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Unbiasedness,
        Suite::VarianceReduction,
        Suite::Linearity,
        Suite::VwbceOptimum,
        Suite::ReservoirUniformity,
        Suite::GradientCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Unbiasedness => "unbiasedness",
            Suite::VarianceReduction => "variance_reduction",
            Suite::Linearity => "linearity",
            Suite::VwbceOptimum => "vwbce_optimum",
            Suite::ReservoirUniformity => "reservoir_uniformity",
            Suite::GradientCheck => "gradient_check",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub claim: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: String,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplier on trial counts, in `(0, 1]`.
    pub trials_scale: f64,
    /// Pairwise indicator used by the single-sample draws.
    pub indicator: fn(f64, f64) -> bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 2024, trials_scale: 1.0, indicator: contrast }
    }
}

impl VerifyOptions {
    fn trials(&self, full: usize, floor: usize) -> usize {
        ((full as f64 * self.trials_scale).round() as usize).clamp(floor.min(full), full)
    }

    fn widen(&self) -> f64 {
        1.0 / self.trials_scale.clamp(1e-6, 1.0).sqrt()
    }

    fn rng(&self, suite: Suite, key: u64) -> ChaCha8Rng {
        rng::keyed(self.seed, key, Purpose::Verify, suite as u64)
    }
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> Vec<Check> {
    match suite {
        Suite::Unbiasedness => unbiasedness(opts),
        Suite::VarianceReduction => variance_reduction(opts),
        Suite::Linearity => linearity(opts),
        Suite::VwbceOptimum => vwbce_optimum(opts),
        Suite::ReservoirUniformity => reservoir_uniformity(opts),
        Suite::GradientCheck => gradient_check(opts),
    }
}

/// Runs the given suites on separate threads; results keep the input order.
pub fn run_all(suites: &[Suite], opts: &VerifyOptions) -> Vec<Check> {
    std::thread::scope(|s| {
        let handles: Vec<_> = suites.iter().map(|&suite| s.spawn(move || run(suite, opts))).collect();
        handles.into_iter().flat_map(|h| h.join().expect("suite panicked")).collect()
    })
}

/// Single-sample indicators average to the user CDF.
///
/// Magnitudes are lognormal draws rounded to integers, so probes sit on atoms
/// and `P(Y' < y)` differs from `P(Y' <= y)` by a visible amount.
fn unbiasedness(opts: &VerifyOptions) -> Vec<Check> {
    const USERS: u64 = 20;
    const PROBE_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
    const POOL: usize = 5;
    let draws = opts.trials(10_000, 500);
    let (mut within, mut cells) = (0usize, 0usize);
    for u in 0..USERS {
        let mu = 0.5 + 1.5 * u as f64 / (USERS - 1) as f64;
        let sigma = 0.4 + 0.6 * ((u * 7) % USERS) as f64 / (USERS - 1) as f64;
        let cdf = LogNormalCdf::new(mu, sigma).expect("valid lognormal");
        let dist = LogNormal::new(mu, sigma).expect("valid lognormal");
        let mut rng = opts.rng(Suite::Unbiasedness, u);
        for q in PROBE_LEVELS {
            let y = cdf.inverse_cdf(q).round().max(1.0);
            // Rounding maps (y - 1/2, y + 1/2) onto y.
            let p = cdf.cdf(y - 0.5);
            let mut hits = 0usize;
            let mut pool = Vec::with_capacity(POOL);
            for _ in 0..draws {
                pool.clear();
                pool.extend((0..POOL).map(|_| PoolEntry::magnitude(dist.sample(&mut rng).round())));
                let l = label::single_sample_label_with(y, &pool, &mut rng, opts.indicator).expect("non-empty pool");
                hits += l.value as usize;
            }
            let mean = hits as f64 / draws as f64;
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            cells += 1;
            if (mean - p).abs() <= 3.0 * sd + 1e-12 {
                within += 1;
            }
        }
    }
    let frac = within as f64 / cells as f64;
    vec![Check {
        suite: Suite::Unbiasedness,
        claim: format!("single-sample mean within 3 sd of CDF ({draws} draws, {cells} cells)"),
        passed: frac >= 0.95,
        measured: frac,
        tolerance: ">= 0.95 of cells".into(),
    }]
}

/// Var(multi-sample label) / Var(single indicator) is about 1/N at p = 1/2.
fn variance_reduction(opts: &VerifyOptions) -> Vec<Check> {
    let reps = opts.trials(10_000, 500);
    let band = 0.2 * opts.widen();
    let mut out = Vec::new();
    for (k, n) in [5usize, 10, 50].into_iter().enumerate() {
        let mut rng = opts.rng(Suite::VarianceReduction, k as u64);
        let (mut multi, mut single) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
        let mut pool = Vec::with_capacity(n);
        for _ in 0..reps {
            pool.clear();
            pool.extend((0..n).map(|_| PoolEntry::magnitude(rng.random())));
            multi.push(label::multi_sample_label(0.5, &pool).expect("non-empty").value);
            single.push(label::single_sample_label(0.5, &pool, &mut rng).expect("non-empty").value);
        }
        let scaled = variance(&multi) / variance(&single) * n as f64;
        out.push(Check {
            suite: Suite::VarianceReduction,
            claim: format!("N * Var(multi) / Var(single) ~ 1 at N = {n}"),
            passed: (scaled - 1.0).abs() <= band,
            measured: scaled,
            tolerance: format!("[{:.3}, {:.3}]", 1.0 - band, 1.0 + band),
        });
    }
    out
}

/// Per-term pool losses equal BCE on the averaged soft label, and soft BCE
/// is minimized at the label.
fn linearity(opts: &VerifyOptions) -> Vec<Check> {
    let cases = opts.trials(100_000, 1_000);
    let mut rng = opts.rng(Suite::Linearity, 0);
    let (mut worst_multi, mut worst_weighted) = (0.0f64, 0.0f64);
    let mut pool = Vec::new();
    for _ in 0..cases {
        let n = rng.random_range(1..=50);
        pool.clear();
        pool.extend((0..n).map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            PoolEntry::magnitude((1.5 * z).exp())
        }));
        let y = (1.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        let p_hat = rng.random_range(1e-3..1.0 - 1e-3);
        let indicators: Vec<bool> = pool.iter().map(|e| contrast(y, e.magnitude)).collect();
        let per_term = loss::mbce_per_term(p_hat, &indicators).expect("finite");
        let soft = loss::soft_bce(p_hat, label::multi_sample_label(y, &pool).expect("non-empty").value).expect("finite");
        worst_multi = worst_multi.max((per_term.loss - soft.loss).abs());
        let weighted = loss::vwbce(p_hat, &pool, y).expect("finite");
        let soft_w =
            loss::soft_bce(p_hat, label::value_weighted_label(y, &pool).expect("non-empty").value).expect("finite");
        worst_weighted = worst_weighted.max((weighted.loss - soft_w.loss).abs());
    }

    let step = 1e-4;
    let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 * step).collect();
    let mut worst_steps = 0.0f64;
    for _ in 0..100 {
        let p_bar: f64 = rng.random();
        let best = grid
            .iter()
            .copied()
            .min_by(|a, b| {
                let la = loss::soft_bce(*a, p_bar).expect("finite").loss;
                let lb = loss::soft_bce(*b, p_bar).expect("finite").loss;
                la.total_cmp(&lb)
            })
            .expect("non-empty grid");
        worst_steps = worst_steps.max((best - p_bar).abs() / step);
    }

    vec![
        Check {
            suite: Suite::Linearity,
            claim: format!("per-term BCE == soft-label BCE ({cases} cases)"),
            passed: worst_multi < 1e-12,
            measured: worst_multi,
            tolerance: "< 1e-12".into(),
        },
        Check {
            suite: Suite::Linearity,
            claim: format!("value-weighted BCE == weighted soft-label BCE ({cases} cases)"),
            passed: worst_weighted < 1e-12,
            measured: worst_weighted,
            tolerance: "< 1e-12".into(),
        },
        Check {
            suite: Suite::Linearity,
            claim: "soft BCE grid minimizer at the label (100 labels)".into(),
            passed: worst_steps <= 1.0 + 1e-9,
            measured: worst_steps,
            tolerance: "<= 1 grid step".into(),
        },
    ]
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Share of total value below `y` for `Uniform(0, 1)` references.
fn uniform_partial_expectation(y: f64) -> f64 {
    simpson(|t| t, 0.0, y, 1_000) / simpson(|t| t, 0.0, 1.0, 1_000)
}

/// `p̂` after each SGD step on a free logit, trained on the value-weighted
/// loss against fresh `Uniform(0, 1)` pools of `pool_size`.
pub fn free_scalar_trajectory<R: Rng + ?Sized>(y: f64, steps: usize, pool_size: usize, rng: &mut R) -> Vec<f64> {
    let mut theta = 0.0f64;
    let mut pool = Vec::with_capacity(pool_size);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        pool.clear();
        pool.extend((0..pool_size).map(|_| PoolEntry::magnitude(rng.random())));
        let p = logistic(theta);
        let grad = loss::vwbce(p, &pool, y).expect("finite").d_phat;
        let lr = 2.0 / (1.0 + t as f64 / 500.0).powf(0.6);
        theta -= lr * grad * p * (1.0 - p);
        out.push(logistic(theta));
    }
    out
}

/// Polyak average of [`free_scalar_trajectory`] over its second half.
pub fn fit_free_scalar<R: Rng + ?Sized>(y: f64, steps: usize, pool_size: usize, rng: &mut R) -> f64 {
    let path = free_scalar_trajectory(y, steps, pool_size, rng);
    let tail = &path[steps / 2..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn vwbce_optimum(opts: &VerifyOptions) -> Vec<Check> {
    let steps = opts.trials(20_000, 4_000);
    [0.2, 0.5, 0.6, 0.9]
        .into_iter()
        .enumerate()
        .map(|(k, y)| {
            let mut rng = opts.rng(Suite::VwbceOptimum, k as u64);
            let fitted = fit_free_scalar(y, steps, 50, &mut rng);
            let target = uniform_partial_expectation(y);
            let err = (fitted - target).abs();
            Check {
                suite: Suite::VwbceOptimum,
                claim: format!("free scalar converges to value share below y = {y} ({target:.4})"),
                passed: err <= 0.02,
                measured: fitted,
                tolerance: format!("{target:.4} +/- 0.02"),
            }
        })
        .collect()
}

/// Pearson statistic for reservoir inclusion counts with `m` items, capacity
/// `n` and `reps` replications. Each count is Binomial(reps, n/m) and the
/// counts sum to `reps * n`, leaving `m - 1` degrees of freedom.
pub fn reservoir_chi_square(counts: &[u64], n: usize, reps: usize) -> (f64, f64) {
    let m = counts.len() as f64;
    let q = n as f64 / m;
    let expected = reps as f64 * q;
    let stat: f64 =
        counts.iter().map(|&c| (c as f64 - expected).powi(2)).sum::<f64>() / (expected * (1.0 - q)) * (m - 1.0) / m;
    let p_value = 1.0 - ChiSquared::new(m - 1.0).expect("df > 0").cdf(stat);
    (stat, p_value)
}

fn reservoir_uniformity(opts: &VerifyOptions) -> Vec<Check> {
    const STREAM: usize = 1_000;
    const CAPACITY: usize = 50;
    let reps = opts.trials(10_000, 500);
    let mut counts = vec![0u64; STREAM];
    for r in 0..reps {
        let mut rng = opts.rng(Suite::ReservoirUniformity, r as u64);
        let mut state = UserState::new(CAPACITY);
        for i in 0..STREAM {
            state.reservoir_update(PoolEntry::magnitude(i as f64), &mut rng);
        }
        for e in state.pool() {
            counts[e.magnitude as usize] += 1;
        }
    }
    let (_, p_value) = reservoir_chi_square(&counts, CAPACITY, reps);
    vec![Check {
        suite: Suite::ReservoirUniformity,
        claim: format!("inclusion counts uniform ({reps} streams of {STREAM}, capacity {CAPACITY})"),
        passed: p_value > 0.001,
        measured: p_value,
        tolerance: "p > 0.001".into(),
    }]
}

/// Analytic vs central-difference gradients of the co-training loss, and
/// bit-identical percentile head after a gated-off update.
fn gradient_check(opts: &VerifyOptions) -> Vec<Check> {
    let mut rng = opts.rng(Suite::GradientCheck, 0);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut changed = 0usize;
    for t in 0..100u64 {
        let input_dim = rng.random_range(1..=6);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=8)).collect();
        let model = DualHeadModel::new(&ModelConfig { input_dim, hidden, seed: opts.seed ^ t }).expect("valid");
        let x: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
        let y = rng.sample::<f64, _>(StandardNormal).exp();
        let label = ContrastiveLabel {
            value: rng.random(),
            variant: LabelVariant::Multi,
            gate_open: true,
            sample_count: 10,
            fallback: false,
        };
        let lambda = rng.random_range(0.1..2.0);
        let objective = |m: &DualHeadModel| {
            let (y_hat, p_hat) = m.predict(&x);
            loss::cotrain_loss(y_hat, y, p_hat, &label, lambda).expect("finite").loss
        };
        let pass = model.forward(&x);
        let out = loss::cotrain_loss(pass.y_hat, y, pass.p_hat, &label, lambda).expect("finite");
        let analytic = model.backward(&pass, out.d_yhat, out.d_phat).flatten();
        let base = model.parameters().flatten();
        for i in 0..base.len() {
            let mut v = base.clone();
            let mut probe = model.clone();
            v[i] = base[i] + h;
            probe.parameters_mut().set_flat(&v);
            let plus = objective(&probe);
            v[i] = base[i] - h;
            probe.parameters_mut().set_flat(&v);
            let minus = objective(&probe);
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }

        let closed = ContrastiveLabel::gated_off(LabelVariant::Multi);
        let out = loss::cotrain_loss(pass.y_hat, y, pass.p_hat, &closed, lambda).expect("finite");
        let grads = model.backward(&pass, out.d_yhat, out.d_phat);
        let mut stepped = model.clone();
        stepped.sgd_step(&grads, 0.05).expect("finite step");
        let (a, b) = (&model.parameters().pct_head, &stepped.parameters().pct_head);
        changed += a.weights.iter().chain(&a.bias).zip(b.weights.iter().chain(&b.bias))
            .filter(|(p, q)| p.to_bits() != q.to_bits())
            .count();
    }
    vec![
        Check {
            suite: Suite::GradientCheck,
            claim: "analytic vs central-difference gradients (100 models)".into(),
            passed: worst < 1e-4,
            measured: worst,
            tolerance: "max rel err < 1e-4".into(),
        },
        Check {
            suite: Suite::GradientCheck,
            claim: "gated-off step leaves percentile head bit-identical".into(),
            passed: changed == 0,
            measured: changed as f64,
            tolerance: "0 changed parameters".into(),
        },
    ]
}
