//! `longit` command-line front end: `synth`, `run` and `validate`.

pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use longit_core::pipeline::{run_experiment, DatasetSource, ExperimentConfig, ExperimentReport, ModelName};
use longit_core::synthgen::{self, SynthConfig};
use longit_core::tabular::{self, Cohort, SplitConfig};

#[derive(Debug, Parser)]
#[command(name = "longit", version, about = "Longitudinal response prediction with sampled intermediate labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort CSV.
    Synth(SynthArgs),
    /// Run an experiment and write its report files.
    Run(RunArgs),
    /// Check a config and its dataset without training anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic-cohort JSON; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report directory; overrides `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub const EXIT_FATAL: u8 = 1;
pub const EXIT_ALL_FAILED: u8 = 2;

/// Parses `args` and runs the command, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_FATAL)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}

/// Runs one command. `Ok` carries the exit code; `Err` is a fatal
/// config or data problem.
pub fn execute(command: &Command) -> anyhow::Result<u8> {
    match command {
        Command::Synth(args) => cmd_synth(args).map(|_| 0),
        Command::Run(args) => {
            let report = cmd_run(args)?;
            for m in report.models.iter().filter(|m| m.error.is_some()) {
                eprintln!("model {} failed: {}", m.name, m.error.as_deref().unwrap_or_default());
            }
            if report.all_failed() {
                eprintln!("error: every model failed");
                Ok(EXIT_ALL_FAILED)
            } else {
                Ok(0)
            }
        }
        Command::Validate(args) => {
            let diagnostics = cmd_validate(args)?;
            for d in &diagnostics {
                println!("{d}");
            }
            if diagnostics.iter().any(|d| d.level == Level::Fatal) {
                Ok(EXIT_FATAL)
            } else {
                println!("ok");
                Ok(0)
            }
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open config {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .with_context(|| format!("invalid config {}", path.display()))
}

/// Reads an experiment config. A relative dataset path is taken relative to
/// the config file.
pub fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut config: ExperimentConfig = read_json(path)?;
    if let DatasetSource::Path(p) = &mut config.dataset {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<Cohort> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let cohort = synthgen::generate(&config)?;
    tabular::save_cohort(&cohort, &args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    let t = synthgen::transition_matrix(&cohort);
    println!("transition matrix (rows y1, columns y2)");
    println!("        y2=0  y2=1");
    for (y1, row) in t.iter().enumerate() {
        println!("y1={y1}  {:>5} {:>5}", row[0], row[1]);
    }
    Ok(cohort)
}

/// Runs the experiment and writes every report file. Returns the report
/// even when all models failed; the caller decides the exit code.
pub fn cmd_run(args: &RunArgs) -> anyhow::Result<ExperimentReport> {
    let mut config = load_config(&args.config, args.seed)?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    let cohort = config.load_cohort()?;
    let report = match args.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| run_experiment(&config, &cohort))?,
        None => run_experiment(&config, &cohort)?,
    };
    output::write_all(&report, &config.out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Info,
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub level: Level,
    pub check: &'static str,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let level = match self.level {
            Level::Info => "info",
            Level::Warning => "warning",
            Level::Fatal => "fatal",
        };
        write!(f, "{level}\t{}\t{}", self.check, self.message)
    }
}

/// Dry-run checks. Config and dataset problems become fatal diagnostics
/// instead of errors, so every problem is listed at once.
pub fn cmd_validate(args: &ValidateArgs) -> anyhow::Result<Vec<Diagnostic>> {
    let mut out = Vec::new();
    let mut push = |level, check, message: String| out.push(Diagnostic { level, check, message });

    let config = match load_config(&args.config, args.seed) {
        Ok(c) => c,
        Err(e) => {
            push(Level::Fatal, "config", format!("{e:#}"));
            return Ok(out);
        }
    };
    let cohort = match config.load_cohort() {
        Ok(c) => c,
        Err(e) => {
            push(Level::Fatal, "schema", e.to_string());
            return Ok(out);
        }
    };
    push(
        Level::Info,
        "schema",
        format!(
            "{} patients, {} baseline features, {} fu1 features, covariates [{}]",
            cohort.len(),
            cohort.feature_names_baseline().len(),
            cohort.feature_names_fu1().len(),
            cohort.covariate_names().join(", ")
        ),
    );

    let sizes = cohort.stratum_sizes();
    for (s, &size) in sizes.iter().enumerate() {
        let (y1, y2) = (s / 2, s % 2);
        let level = match size {
            1 => Level::Fatal,
            0 => Level::Warning,
            _ => Level::Info,
        };
        push(level, "strata", format!("(y1={y1}, y2={y2}): {size} patients"));
    }

    let n_splits = config.n_splits();
    if sizes.iter().all(|&s| s != 1) {
        let expected = n_splits as f64 * config.test_fraction;
        let plan = tabular::make_splits(
            &cohort,
            &SplitConfig {
                n_splits,
                test_fraction: config.test_fraction,
                seed: 0,
                min_occurrences: config.min_occurrences,
                max_retries: config.max_retries,
            },
        );
        match plan {
            Ok(plan) => {
                let min = plan.test_occurrences(cohort.len()).into_iter().min().unwrap_or(0);
                push(
                    Level::Info,
                    "min_occurrences",
                    format!(
                        "{n_splits} splits give about {expected:.1} test appearances per patient (fewest {min}), {} required",
                        config.min_occurrences
                    ),
                );
            }
            Err(e) => push(
                Level::Fatal,
                "min_occurrences",
                format!("{e}; about {expected:.1} test appearances per patient expected"),
            ),
        }
    }

    for spec in config.resolved_models(&cohort) {
        if spec.name.requires_fu1() && !cohort.has_fu1() {
            push(
                Level::Fatal,
                "models",
                format!("{} needs follow-up-1 columns, the dataset has none", spec.name),
            );
        }
        if spec.name == ModelName::Delta
            && !cohort
                .feature_names_baseline()
                .iter()
                .any(|b| cohort.feature_names_fu1().contains(b))
            && cohort.has_fu1()
        {
            push(
                Level::Fatal,
                "models",
                "delta needs fu1 features named like the baseline features".into(),
            );
        }
    }
    Ok(out)
}
