//! Command-line entry point.

pub mod checks;
pub mod commands;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::error::Error;
use crate::numerics::tape::OP_NAMES;
use checks::SuiteOptions;
use commands::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_gradcheck, cmd_train, format_report, read_report_input, CHECKPOINT_FILE,
};
use config::{RunConfig, CONFIG_ECHO};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const CHECKS_FAILED: i32 = 5;
}

/// Environment variable naming the worker thread count.
pub const THREADS_ENV: &str = "LANETOPO_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Run(#[from] Error),

    #[error("{0}")]
    Usage(String),

    #[error("{failed} of {total} gradient checks failed: {names}")]
    ChecksFailed { failed: usize, total: usize, names: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::CONFIG,
            CliError::ChecksFailed { .. } => exit::CHECKS_FAILED,
            CliError::Run(e) => match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Infeasible(_) => exit::CONFIG,
                Error::Parse { .. } | Error::Version { .. } | Error::Io { .. } | Error::Checkpoint(_) => exit::DATA,
                Error::NonFinite { .. } | Error::NumericalAbort { .. } => exit::NUMERICAL,
                Error::Shape { .. } | Error::Tape(_) | Error::Degenerate(_) => exit::OTHER,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lanetopo", version, about = "Lane topology reasoning on synthetic road scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of scenes (overrides dataset.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model and write a checkpoint, a loss log and metric snapshots.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        ablation: AblationArgs,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint file; its directory's config echo is used when
        /// --config is absent.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to score.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Also write SVG precision-recall and score plots.
        #[arg(long)]
        plots: bool,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeded cases per check.
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Only checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// Negative control: scale the backward pass of this operation.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(OP_NAMES))]
        corrupt_op: Option<String>,
        #[arg(long, default_value_t = 1e-3)]
        corrupt_factor: f64,
    },
    /// Train and evaluate the configured ablation variants.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Format metric reports and metric-component files as tables.
    Report {
        /// metrics.json files, directories holding one, or component CSVs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the table to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training steps (overrides train.steps).
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training dataset (overrides paths.data).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset (overrides paths.eval_data).
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct AblationArgs {
    #[arg(long)]
    pub plain_sa: bool,
    #[arg(long)]
    pub no_curve_ca: bool,
    #[arg(long)]
    pub baseline_l2l: bool,
    #[arg(long)]
    pub baseline_l2t: bool,
    #[arg(long)]
    pub no_contrastive: bool,
}

impl AblationArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let a = &mut cfg.ablation;
        a.plain_sa |= self.plain_sa;
        a.no_curve_ca |= self.no_curve_ca;
        a.baseline_l2l |= self.baseline_l2l;
        a.baseline_l2t |= self.baseline_l2t;
        a.no_contrastive |= self.no_contrastive;
    }
}

fn resolve(common: &CommonArgs, fallback: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = match (&common.config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.exists() => RunConfig::load(p)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = common.steps {
        cfg.train.steps = steps;
    }
    Ok(cfg)
}

fn training_data(cfg: &RunConfig, args: &DataArgs) -> Result<(PathBuf, Option<PathBuf>), CliError> {
    let data = args
        .data
        .clone()
        .or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| CliError::Usage("no dataset given: pass --data or set paths.data".into()))?;
    Ok((data, args.eval_data.clone().or_else(|| cfg.paths.eval_data.clone())))
}

/// Runs one parsed command; human-readable output goes to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut say = |s: &str| {
        let _ = stdout.write_all(s.as_bytes());
    };
    match cli.command {
        Command::Generate { common, count } => {
            let mut cfg = resolve(&common, None)?;
            if let Some(n) = count {
                cfg.dataset.count = n;
            }
            cfg.validate()?;
            let m = cmd_generate(&cfg, &common.out)?;
            say(&format!("wrote {} scenes to {}\n", m.count, common.out.display()));
        }
        Command::Train {
            common,
            data,
            ablation,
        } => {
            let mut cfg = resolve(&common, None)?;
            ablation.apply(&mut cfg);
            cfg.validate()?;
            let (train_dir, eval_dir) = training_data(&cfg, &data)?;
            cfg.paths.data = Some(train_dir.clone());
            cfg.paths.eval_data = eval_dir.clone();
            let outcome = cmd_train(&cfg, &train_dir, eval_dir.as_deref(), &common.out)?;
            say(&format!(
                "trained {} steps, final loss {:.6e}; checkpoint {}\n",
                cfg.train.steps,
                outcome.final_loss,
                common.out.join(CHECKPOINT_FILE).display()
            ));
            if let Some((step, report)) = outcome.snapshots.last() {
                say(&format!("metrics after step {step}:\n{}", report.to_text()));
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            ablation,
            plots,
        } => {
            let echo = checkpoint.parent().map(|d| d.join(CONFIG_ECHO));
            let mut cfg = resolve(&common, echo.as_deref())?;
            ablation.apply(&mut cfg);
            cfg.validate()?;
            let data = data
                .or_else(|| cfg.paths.eval_data.clone())
                .or_else(|| cfg.paths.data.clone())
                .ok_or_else(|| CliError::Usage("no dataset given: pass --data".into()))?;
            let evaluation = cmd_eval(&cfg, &checkpoint, &data, &common.out, plots)?;
            say(&evaluation.report.to_text());
        }
        Command::Gradcheck {
            out,
            cases,
            filter,
            corrupt_op,
            corrupt_factor,
        } => {
            let mut opts = SuiteOptions {
                cases,
                filter,
                ..SuiteOptions::default()
            };
            if let Some(op) = corrupt_op {
                opts.gradcheck.corrupt = corrupt_factor;
                opts.gradcheck.corrupt_op = OP_NAMES.iter().copied().find(|n| *n == op);
            }
            let (rows, table) = cmd_gradcheck(&opts, out.as_deref())?;
            say(&table);
            let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if !failed.is_empty() || rows.is_empty() {
                return Err(CliError::ChecksFailed {
                    failed: failed.len(),
                    total: rows.len(),
                    names: failed.join(", "),
                });
            }
        }
        Command::Ablate { common, data } => {
            let mut cfg = resolve(&common, None)?;
            cfg.validate()?;
            let (train_dir, eval_dir) = training_data(&cfg, &data)?;
            cfg.paths.data = Some(train_dir.clone());
            cfg.paths.eval_data = eval_dir.clone();
            let mut err = std::io::stderr();
            let table = cmd_ablate(&cfg, &train_dir, eval_dir.as_deref(), &common.out, Some(&mut err))?;
            say(&table.to_text());
        }
        Command::Report { inputs, out } => {
            let parsed = inputs
                .iter()
                .map(|p| read_report_input(p))
                .collect::<Result<Vec<_>, _>>()?;
            let text = format_report(&parsed)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("report.txt");
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            }
            say(&text);
        }
    }
    Ok(())
}

/// Sizes the global thread pool from the environment.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
        }
    };
    let result = init_threads().and_then(|()| run(cli, &mut std::io::stdout()));
    match result {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
