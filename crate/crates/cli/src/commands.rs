use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cpt_core::eval::{cohort_report, EvalReport, ReportSettings, Scored, TargetRun};
use cpt_core::synth::{Interaction, PercentileOracle, Population};
use cpt_core::trainer::{self, TrainConfig, TrainError, TrainOutcome};
use cpt_core::verify::{self, Check, Suite, VerifyOptions};
use cpt_core::DualHeadModel;

use crate::config::{EvalTarget, ExperimentConfig};
use crate::error::CliError;
use crate::files;

pub const STREAM_FILE: &str = "stream.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STATE_FILE: &str = "state.bin";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BASELINE_CHECKPOINT_FILE: &str = "baseline_checkpoint.bin";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

/// Quantile levels written to the oracle grid.
pub const ORACLE_LEVELS: [f64; 21] = [
    0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85,
    0.90, 0.95, 0.99,
];

fn population(config: &ExperimentConfig) -> Result<Population, CliError> {
    Population::new(config.population.clone()).map_err(|e| CliError::validation(e.to_string()))
}

pub fn simulate(config: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    files::ensure_dir(out)?;
    let pop = population(config)?;
    let stream: Vec<Interaction> = pop.stream().collect();
    let eval = pop.eval_set();
    files::write_jsonl(&out.join(STREAM_FILE), &stream, config, "simulate")?;
    files::write_jsonl(&out.join(EVAL_FILE), &eval, config, "simulate")?;

    let oracle = PercentileOracle::build(&pop, pop.users().iter().map(|u| u.id), config.population.oracle_samples);
    let mut csv = String::from("user_id,cohort,level,magnitude\n");
    for user in pop.users() {
        for level in ORACLE_LEVELS {
            let q = oracle.quantile(user.id, level).expect("oracle covers every user");
            writeln!(csv, "{},{},{},{}", user.id, pop.cohort_name(user), level, q).expect("write to string");
        }
    }
    files::write_text(&out.join(ORACLE_FILE), &csv, config, "simulate")?;

    let mut by_cohort: BTreeMap<&str, (usize, f64, usize)> = BTreeMap::new();
    for it in &stream {
        let e = by_cohort.entry(it.cohort.as_str()).or_default();
        e.0 += 1;
        e.1 += it.y;
        e.2 += usize::from(it.b);
    }
    let mut summary = format!("{} interactions, {} users, {} eval rows\n", stream.len(), pop.users().len(), eval.len());
    summary.push_str("cohort      interactions  mean_y     positive_rate\n");
    for name in config.population.cohort_names() {
        if let Some(&(n, sum, pos)) = by_cohort.get(name.as_str()) {
            writeln!(summary, "{name:<11} {n:>12}  {:<10.4} {:.4}", sum / n as f64, pos as f64 / n as f64)
                .expect("write to string");
        }
    }
    Ok(summary)
}

fn train_one(stream: &[Interaction], config: &TrainConfig) -> Result<TrainOutcome, CliError> {
    let input_dim = stream[0].features.len();
    trainer::train(stream, config, input_dim).map_err(|e| match e {
        TrainError::Config(_) | TrainError::OutOfOrder { .. } | TrainError::Malformed { .. } => {
            CliError::validation(e.to_string())
        }
        TrainError::Model(_) | TrainError::Loss(_) => CliError::runtime(e.to_string()),
    })
}

pub fn train(config: &ExperimentConfig, stream_path: &Path, out: &Path) -> Result<String, CliError> {
    let stream: Vec<Interaction> = files::read_jsonl(stream_path)?;
    if stream.is_empty() {
        return Err(CliError::validation("empty stream"));
    }
    files::ensure_dir(out)?;
    let outcome = train_one(&stream, &config.train)?;
    files::write_bytes(&out.join(CHECKPOINT_FILE), &outcome.model.to_bytes(), config, "train")?;
    files::write_bytes(&out.join(STATE_FILE), &outcome.store.to_bytes(), config, "train")?;
    files::write_jsonl(&out.join(LOG_FILE), &outcome.log, config, "train")?;

    let gated = outcome.log.iter().filter(|r| !r.gate_open).count();
    let last = outcome.log.last().map_or(0.0, |r| r.running_loss);
    let mut summary = format!(
        "{:?}: {} steps, {} users, {:.2}% gated, final running loss {last:.6}\n",
        config.train.variant,
        outcome.log.len(),
        outcome.store.len(),
        100.0 * gated as f64 / outcome.log.len() as f64,
    );
    if config.baseline {
        let base = train_one(&stream, &config.baseline_train())?;
        files::write_bytes(&out.join(BASELINE_CHECKPOINT_FILE), &base.model.to_bytes(), config, "train")?;
        let last = base.log.last().map_or(0.0, |r| r.running_loss);
        writeln!(summary, "Regression baseline: final running loss {last:.6}").expect("write to string");
    }
    Ok(summary)
}

pub fn load_checkpoint(path: &Path) -> Result<DualHeadModel, CliError> {
    DualHeadModel::from_bytes(&files::read_bytes(path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Within-user top-half-by-affinity labels.
fn affinity_labels(eval: &[Interaction]) -> Vec<f64> {
    let mut by_user: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for it in eval {
        by_user.entry(it.user_id).or_default().push(it.affinity);
    }
    let medians: BTreeMap<u64, f64> = by_user
        .into_iter()
        .map(|(u, mut a)| {
            a.sort_by(f64::total_cmp);
            (u, a[a.len() / 2])
        })
        .collect();
    eval.iter().map(|it| f64::from(u8::from(it.affinity >= medians[&it.user_id]))).collect()
}

pub fn target_runs(model: &DualHeadModel, eval: &[Interaction], targets: &[EvalTarget]) -> Vec<TargetRun> {
    let scores: Vec<f64> = eval.iter().map(|it| model.score(&it.features)).collect();
    let affinity = affinity_labels(eval);
    targets
        .iter()
        .map(|&t| {
            let records = eval
                .iter()
                .enumerate()
                .map(|(i, it)| Scored {
                    user: it.user_id,
                    score: scores[i],
                    truth: match t {
                        EvalTarget::Magnitude => it.y,
                        EvalTarget::Affinity => affinity[i],
                        EvalTarget::Binary => f64::from(it.b),
                    },
                })
                .collect();
            TargetRun { target: t.name().to_owned(), metric: t.metric(), records }
        })
        .collect()
}

fn check_dims(model: &DualHeadModel, eval: &[Interaction], path: &Path) -> Result<(), CliError> {
    match eval.iter().position(|it| it.features.len() != model.input_dim()) {
        Some(i) => Err(CliError::validation(format!(
            "feature dimension mismatch: checkpoint expects {}, {} row {} has {}",
            model.input_dim(),
            path.display(),
            i + 1,
            eval[i].features.len()
        ))),
        None => Ok(()),
    }
}

pub struct EvalPaths {
    pub checkpoint: PathBuf,
    pub baseline: Option<PathBuf>,
    pub eval_set: PathBuf,
}

pub fn evaluate(config: &ExperimentConfig, paths: &EvalPaths, out: &Path) -> Result<EvalReport, CliError> {
    let model = load_checkpoint(&paths.checkpoint)?;
    let eval: Vec<Interaction> = files::read_jsonl(&paths.eval_set)?;
    if eval.is_empty() {
        return Err(CliError::validation("empty eval set"));
    }
    check_dims(&model, &eval, &paths.eval_set)?;
    let run = target_runs(&model, &eval, &config.eval.targets);
    let baseline = match &paths.baseline {
        Some(p) => {
            let base = load_checkpoint(p)?;
            check_dims(&base, &eval, &paths.eval_set)?;
            Some(target_runs(&base, &eval, &config.eval.targets))
        }
        None => None,
    };
    let cohorts: BTreeMap<u64, String> = eval.iter().map(|it| (it.user_id, it.cohort.clone())).collect();
    let settings = ReportSettings { pairs_per_user: config.eval.pairs_per_user, seed: config.seed() };
    let report = cohort_report(&run, baseline.as_deref(), &cohorts, &config.population.cohort_names(), &settings)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    files::ensure_dir(out)?;
    files::write_text(&out.join(REPORT_CSV), &report.to_csv(), config, "eval")?;
    files::write_text(&out.join(REPORT_JSON), &(report.to_json() + "\n"), config, "eval")?;
    Ok(report)
}

pub fn verify(suites: &[Suite], opts: &VerifyOptions) -> (String, Vec<Check>) {
    let checks = verify::run_all(suites, opts);
    let mut table = format!("{:<21} {:<6} {:>14}  {:<22} claim\n", "suite", "status", "measured", "tolerance");
    for c in &checks {
        writeln!(
            table,
            "{:<21} {:<6} {:>14.6e}  {:<22} {}",
            c.suite.name(),
            if c.passed { "PASS" } else { "FAIL" },
            c.measured,
            c.tolerance,
            c.claim
        )
        .expect("write to string");
    }
    (table, checks)
}
