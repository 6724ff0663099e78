//! User-averaged ranking metrics, overall and per activity cohort.
//!
//! Binary targets are scored with UAUC (mean per-user ROC-AUC); continuous
//! targets with URegAUC (mean per-user fraction of item pairs whose predicted
//! order matches the ground-truth magnitude order). Tied scores earn half
//! credit in both.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Purpose};
use crate::stats::average_ranks;

pub const DEFAULT_PAIRS_PER_USER: usize = 100;
pub const ALL_COHORTS: &str = "all";
pub const CSV_HEADER: &str = "target,metric,cohort,value,users,skipped,delta_vs_baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "UAUC")]
    Uauc,
    #[serde(rename = "URegAUC")]
    UregAuc,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Uauc => "UAUC",
            Metric::UregAuc => "URegAUC",
        }
    }
}

/// One scored `(user, item)` prediction with its ground truth: a 0/1 label
/// for UAUC, a magnitude for URegAUC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub user: u64,
    pub score: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    /// Users that met the metric's precondition.
    pub users: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no user met the metric precondition ({skipped} skipped)")]
    EmptyCohort { skipped: usize },
    #[error("runs are not comparable: {0}")]
    Mismatch(String),
    #[error("non-finite score for user {0}")]
    NonFinite(u64),
}

fn by_user(records: &[Scored]) -> Result<BTreeMap<u64, Vec<(f64, f64)>>, EvalError> {
    let mut out: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        if !r.score.is_finite() || !r.truth.is_finite() {
            return Err(EvalError::NonFinite(r.user));
        }
        out.entry(r.user).or_default().push((r.score, r.truth));
    }
    Ok(out)
}

fn average(per_user: impl Iterator<Item = Option<f64>>) -> Result<MetricValue, EvalError> {
    let (mut sum, mut users, mut skipped) = (0.0, 0usize, 0usize);
    for v in per_user {
        match v {
            Some(v) => {
                sum += v;
                users += 1;
            }
            None => skipped += 1,
        }
    }
    if users == 0 {
        return Err(EvalError::EmptyCohort { skipped });
    }
    Ok(MetricValue { value: sum / users as f64, users, skipped })
}

/// ROC-AUC of one user's `(score, label)` pairs via the rank-sum identity;
/// `None` unless both classes are present.
pub fn auc(items: &[(f64, bool)]) -> Option<f64> {
    let n_pos = items.iter().filter(|(_, l)| *l).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let scores: Vec<f64> = items.iter().map(|(s, _)| *s).collect();
    let ranks = average_ranks(&scores);
    let pos_rank_sum: f64 = ranks.iter().zip(items).filter(|(_, (_, l))| *l).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean per-user AUC. Truth values above 0.5 count as positive.
pub fn uauc(records: &[Scored]) -> Result<MetricValue, EvalError> {
    let groups = by_user(records)?;
    average(groups.values().map(|items| {
        let labeled: Vec<(f64, bool)> = items.iter().map(|&(s, t)| (s, t > 0.5)).collect();
        auc(&labeled)
    }))
}

fn pair_credit(a: (f64, f64), b: (f64, f64)) -> f64 {
    let truth = a.1.total_cmp(&b.1);
    let pred = a.0.partial_cmp(&b.0).expect("finite scores");
    if pred == std::cmp::Ordering::Equal {
        0.5
    } else if pred == truth {
        1.0
    } else {
        0.0
    }
}

/// Order-preservation rate for one user's `(score, magnitude)` items.
///
/// Uses every pair with distinct magnitudes when there are at most
/// `pairs_per_user` of them, otherwise `pairs_per_user` uniformly sampled
/// such pairs. `None` when no pair has distinct magnitudes.
pub fn regression_auc<R: Rng + ?Sized>(items: &[(f64, f64)], pairs_per_user: usize, rng: &mut R) -> Option<f64> {
    let n = items.len();
    let mut mags: Vec<f64> = items.iter().map(|i| i.1).collect();
    mags.sort_by(f64::total_cmp);
    let mut tied = 0usize;
    let mut run = 1usize;
    for w in mags.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tied += run * (run - 1) / 2;
            run = 1;
        }
    }
    tied += run * (run - 1) / 2;
    let distinct = n * n.saturating_sub(1) / 2 - tied;
    if distinct == 0 {
        return None;
    }
    if distinct <= pairs_per_user {
        let mut credit = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if items[i].1 != items[j].1 {
                    credit += pair_credit(items[i], items[j]);
                }
            }
        }
        return Some(credit / distinct as f64);
    }
    let mut credit = 0.0;
    for _ in 0..pairs_per_user {
        loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j && items[i].1 != items[j].1 {
                credit += pair_credit(items[i], items[j]);
                break;
            }
        }
    }
    Some(credit / pairs_per_user as f64)
}

/// Mean per-user regression AUC. Pair sampling draws from a per-user stream
/// of `seed`, so results do not depend on record order across users.
pub fn ureg_auc(records: &[Scored], pairs_per_user: usize, seed: u64) -> Result<MetricValue, EvalError> {
    let groups = by_user(records)?;
    average(groups.iter().map(|(&user, items)| {
        let mut rng = rng::keyed(seed, user, Purpose::PairSampling, 0);
        regression_auc(items, pairs_per_user.max(1), &mut rng)
    }))
}

pub fn evaluate(metric: Metric, records: &[Scored], pairs_per_user: usize, seed: u64) -> Result<MetricValue, EvalError> {
    match metric {
        Metric::Uauc => uauc(records),
        Metric::UregAuc => ureg_auc(records, pairs_per_user, seed),
    }
}

/// Predictions of one model for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRun {
    pub target: String,
    pub metric: Metric,
    pub records: Vec<Scored>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target: String,
    pub metric: Metric,
    pub cohort: String,
    /// `None` marks an empty cohort.
    pub value: Option<f64>,
    pub users: usize,
    pub skipped: usize,
    pub delta_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone)]
pub struct ReportSettings {
    pub pairs_per_user: usize,
    pub seed: u64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { pairs_per_user: DEFAULT_PAIRS_PER_USER, seed: 0 }
    }
}

fn cohort_metric(
    run: &TargetRun,
    cohort: Option<&str>,
    cohorts: &BTreeMap<u64, String>,
    settings: &ReportSettings,
) -> Result<MetricValue, EvalError> {
    let subset: Vec<Scored> = run
        .records
        .iter()
        .filter(|r| cohort.is_none_or(|c| cohorts.get(&r.user).map(String::as_str) == Some(c)))
        .copied()
        .collect();
    evaluate(run.metric, &subset, settings.pairs_per_user, settings.seed)
}

/// Per-target, per-cohort metric table with deltas against `baseline`.
///
/// Rows come in target order, each with an `all` row followed by one row per
/// name in `cohort_order`. Cohorts where no user qualifies produce a row with
/// no value instead of failing the report.
pub fn cohort_report(
    run: &[TargetRun],
    baseline: Option<&[TargetRun]>,
    cohorts: &BTreeMap<u64, String>,
    cohort_order: &[String],
    settings: &ReportSettings,
) -> Result<EvalReport, EvalError> {
    if let Some(base) = baseline {
        if base.len() != run.len() {
            return Err(EvalError::Mismatch(format!("{} targets vs {} in baseline", run.len(), base.len())));
        }
        for (a, b) in run.iter().zip(base) {
            if a.target != b.target || a.metric != b.metric || a.records.len() != b.records.len() {
                return Err(EvalError::Mismatch(format!("target `{}` differs from baseline `{}`", a.target, b.target)));
            }
        }
    }
    let mut rows = Vec::new();
    for (t, target) in run.iter().enumerate() {
        let names = std::iter::once(None).chain(cohort_order.iter().map(|c| Some(c.as_str())));
        for cohort in names {
            let value = cohort_metric(target, cohort, cohorts, settings);
            let base = baseline.map(|b| cohort_metric(&b[t], cohort, cohorts, settings));
            let (value, users, skipped) = match value {
                Ok(m) => (Some(m.value), m.users, m.skipped),
                Err(EvalError::EmptyCohort { skipped }) => (None, 0, skipped),
                Err(e) => return Err(e),
            };
            let delta = match (value, base) {
                (Some(v), Some(Ok(b))) => Some(v - b.value),
                _ => None,
            };
            rows.push(ReportRow {
                target: target.target.clone(),
                metric: target.metric,
                cohort: cohort.unwrap_or(ALL_COHORTS).to_owned(),
                value,
                users,
                skipped,
                delta_vs_baseline: delta,
            });
        }
    }
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn row(&self, target: &str, cohort: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.target == target && r.cohort == cohort)
    }

    /// CSV with header `target,metric,cohort,value,users,skipped,delta_vs_baseline`.
    /// Empty cohorts print `EmptyCohort` as their value; a missing delta is blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let value = r.value.map_or_else(|| "EmptyCohort".to_owned(), |v| v.to_string());
            let delta = r.delta_vs_baseline.map_or_else(String::new, |d| d.to_string());
            writeln!(out, "{},{},{},{},{},{},{}", r.target, r.metric.as_str(), r.cohort, value, r.users, r.skipped, delta)
                .expect("write to string");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
