//! `cpt`: simulate a population, train, evaluate per cohort, and run the
//! statistical self-checks.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure,
//! 3 verification-suite failure. Errors go to stderr as one JSON object.

mod commands;
mod config;
mod error;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpt_core::label::contrast;
use cpt_core::verify::{Suite, VerifyOptions};

use crate::commands::EvalPaths;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "cpt", version, about = "Per-user percentile targets: simulate, train, evaluate, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write stream.jsonl, eval.jsonl and oracle.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a stream; writes checkpoint.bin, state.bin, train_log.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/stream.jsonl`.
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Score an eval set; writes report.csv and report.json.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comparison checkpoint. Defaults to `<out>/baseline_checkpoint.bin`
        /// when the config enables the baseline and the file exists.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Defaults to `<out>/eval.jsonl`.
        #[arg(long)]
        eval_set: Option<PathBuf>,
    },
    /// Run the statistical self-check suites.
    Verify {
        #[arg(long, default_value_t = VerifyOptions::default().seed)]
        seed: u64,
        /// Fraction of the full trial counts; tolerances widen to match.
        #[arg(long, default_value_t = 1.0)]
        trials_scale: f64,
        /// Run only these suites (repeatable).
        #[arg(long = "suite")]
        suites: Vec<Suite>,
        /// Mutation check: count ties as wins in single-sample draws.
        #[arg(long, hide = true)]
        mutate_ties_as_one: bool,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::parse("")?,
    };
    if let Some(seed) = common.seed {
        config = config.with_seed(seed)?;
    }
    let out = common.out.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

fn ties_as_one(y: f64, reference: f64) -> bool {
    y >= reference
}

fn or_default(path: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common } => {
            let (config, out) = load(&common)?;
            print!("{}", commands::simulate(&config, &out)?);
        }
        Command::Train { common, stream } => {
            let (config, out) = load(&common)?;
            let stream = or_default(&stream, &out, commands::STREAM_FILE);
            print!("{}", commands::train(&config, &stream, &out)?);
        }
        Command::Eval { common, checkpoint, baseline, eval_set } => {
            let (config, out) = load(&common)?;
            let default_baseline = out.join(commands::BASELINE_CHECKPOINT_FILE);
            let baseline = baseline.or_else(|| (config.baseline && default_baseline.exists()).then_some(default_baseline));
            let paths = EvalPaths {
                checkpoint: or_default(&checkpoint, &out, commands::CHECKPOINT_FILE),
                baseline,
                eval_set: or_default(&eval_set, &out, commands::EVAL_FILE),
            };
            print!("{}", commands::evaluate(&config, &paths, &out)?.to_csv());
        }
        Command::Verify { seed, trials_scale, suites, mutate_ties_as_one } => {
            if !(trials_scale > 0.0 && trials_scale <= 1.0) {
                return Err(CliError::validation(format!("trials-scale must lie in (0, 1], got {trials_scale}")));
            }
            let opts = VerifyOptions {
                seed,
                trials_scale,
                indicator: if mutate_ties_as_one { ties_as_one } else { contrast },
            };
            let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites };
            let (table, checks) = commands::verify(&suites, &opts);
            print!("{table}");
            let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.suite.to_string()).collect();
            if !failed.is_empty() {
                return Err(CliError::verification(format!("failed suites: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            e.print().expect("write help");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::validation(e.to_string().lines().next().unwrap_or("").trim_start_matches("error: "));
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.kind.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
