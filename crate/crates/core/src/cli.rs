//! Command-line front end.
//!
//! Results go to stdout (or `--output`); diagnostics go to stderr. Every
//! failure ends in a single `error[<class>]: <message>` line and an exit
//! code of 1 (usage), 2 (data) or 3 (numerical).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{center_covariates, ingest_cohort, AnalysisConfig, Endpoint, EstimandChoice};
use crate::error::{Error, ErrorClass, Result};
use crate::inference::{analyze, InferenceResult};
use crate::simulation::study::format_number;
use crate::simulation::{run_study_with_threads, ScenarioSpec, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "recurrent-auc",
    version,
    about = "Area under the mean cumulative function: covariate-adjusted trial analysis and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a two-arm trial from subject and event tables.
    Analyze(AnalyzeArgs),
    /// Run a replicated simulation study.
    Simulate(SimulateArgs),
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    /// Subject table: id,arm,followup,terminal[,covariates...].
    #[arg(long)]
    pub subjects: PathBuf,
    /// Event table: id,time.
    #[arg(long)]
    pub events: PathBuf,
    /// Covariate columns to adjust for, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Time horizon.
    #[arg(long)]
    pub tau: f64,
    /// Two-sided significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = EstimandChoice::Both)]
    pub estimand: EstimandChoice,
    #[arg(long, value_enum, default_value_t = Endpoint::Auc)]
    pub endpoint: Endpoint,
    /// Allowed excess of tau over an arm's largest follow-up time.
    #[arg(long, default_value_t = 0.0)]
    pub horizon_grace: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output path, or - for stdout.
    #[arg(long, default_value = "-")]
    pub output: String,
    /// Round numeric output to this many decimals.
    #[arg(long)]
    pub digits: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// TOML scenario file; flags given alongside override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Endpoint.
    #[arg(long, value_enum)]
    pub endpoint: Option<Endpoint>,
    /// Scenario case (1 to 5 for auc, 1 to 2 for rmst).
    #[arg(long)]
    pub case: Option<u8>,
    /// Treatment effect.
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// Total subjects per replicate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Allocation scheme.
    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,
    /// Number of replicates.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Time horizon [default: 2].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Two-sided significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Allowed excess of tau over an arm's largest follow-up time [default: 0.1].
    #[arg(long)]
    pub horizon_grace: Option<f64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Write per-replicate records to this CSV file.
    #[arg(long)]
    pub dump_replicates: Option<PathBuf>,
    /// Summary table format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output path, or - for stdout.
    #[arg(long, default_value = "-")]
    pub output: String,
    /// Round numeric output to this many decimals.
    #[arg(long)]
    pub digits: Option<usize>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn with_output<F>(target: &str, stdout: &mut dyn Write, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    if target == "-" {
        f(stdout)?;
        stdout.flush()?;
        Ok(())
    } else {
        let mut file = io::BufWriter::new(
            File::create(target).map_err(|e| Error::Io(format!("{target}: {e}")))?,
        );
        f(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct AnalysisOutput<'a> {
    config: &'a AnalysisConfig,
    covariates: &'a [String],
    results: Vec<InferenceResult>,
    warnings: &'a [String],
}

fn rounded(r: &InferenceResult, digits: Option<usize>) -> InferenceResult {
    let f = |x: f64| match digits {
        Some(_) => format_number(x, digits).parse().unwrap_or(x),
        None => x,
    };
    InferenceResult {
        point: f(r.point),
        se: f(r.se),
        ci_lower: f(r.ci_lower),
        ci_upper: f(r.ci_upper),
        z: f(r.z),
        p_value: f(r.p_value),
        ..r.clone()
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = AnalysisConfig::new(args.tau)?
        .with_alpha(args.alpha)?
        .with_estimand(args.estimand)
        .with_endpoint(args.endpoint)
        .with_horizon_grace(args.horizon_grace)?;
    let cohort = ingest_cohort(open(&args.subjects)?, open(&args.events)?)?;
    let names: Vec<String> = args
        .covariates
        .iter()
        .flatten()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let report = if names.is_empty() {
        analyze(&cohort, &config, None)?
    } else {
        let selected = cohort.select_covariates(&names)?;
        let x = center_covariates(&selected)?;
        analyze(&selected, &config, Some(&x))?
    };
    let results: Vec<InferenceResult> = report
        .results
        .iter()
        .map(|r| rounded(r, args.digits))
        .collect();
    with_output(&args.output, stdout, |w| match args.format {
        Format::Json => {
            let out = AnalysisOutput {
                config: &config,
                covariates: &names,
                results,
                warnings: &report.warnings,
            };
            serde_json::to_writer_pretty(&mut *w, &out).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        }
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(w);
            for r in &results {
                wtr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            wtr.flush()?;
            Ok(())
        }
    })
}

/// Scenario from an optional config file overlaid with explicit flags.
pub fn scenario_from_args(args: &SimulateArgs) -> Result<ScenarioSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
            toml::from_str::<ScenarioSpec>(&text)
                .map_err(|e| Error::InvalidScenario(e.message().to_string()))?
        }
        None => {
            let case = args.case.ok_or_else(|| {
                Error::InvalidScenario("--case is required without --config".into())
            })?;
            let n = args
                .n
                .ok_or_else(|| Error::InvalidScenario("--n is required without --config".into()))?;
            ScenarioSpec::new(
                args.endpoint.unwrap_or(Endpoint::Auc),
                case,
                args.theta.unwrap_or(0.0),
                n,
                args.scheme.unwrap_or(Scheme::Simple),
            )
        }
    };
    if let Some(v) = args.endpoint {
        spec.endpoint = v;
    }
    if let Some(v) = args.case {
        spec.case = v;
    }
    if let Some(v) = args.theta {
        spec.theta = v;
    }
    if let Some(v) = args.n {
        spec.n = v;
    }
    if let Some(v) = args.scheme {
        spec.scheme = v;
    }
    if let Some(v) = args.reps {
        spec.replicates = v;
    }
    if let Some(v) = args.seed {
        spec.base_seed = v;
    }
    if let Some(v) = args.tau {
        spec.tau = v;
    }
    if let Some(v) = args.alpha {
        spec.alpha = v;
    }
    if let Some(v) = args.horizon_grace {
        spec.horizon_grace = v;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let spec = scenario_from_args(args)?;
    log::info!(
        "simulating {} case {} theta {} n {} scheme {} with {} replicates",
        spec.endpoint,
        spec.case,
        spec.theta,
        spec.n,
        spec.scheme,
        spec.replicates
    );
    let study = run_study_with_threads(&spec, args.threads)?;
    if let Some(path) = &args.dump_replicates {
        let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        study.write_replicates_csv(io::BufWriter::new(file))?;
    }
    with_output(&args.output, stdout, |w| match args.format {
        Format::Json => study.write_json(w, args.digits),
        Format::Csv => study.write_summary_csv(w, args.digits),
    })
}

fn report_error(stderr: &mut dyn Write, class: ErrorClass, message: &str) -> i32 {
    let line = message.lines().map(str::trim).collect::<Vec<_>>().join(" ");
    let _ = writeln!(stderr, "error[{}]: {line}", class.label());
    class.exit_code()
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            return report_error(stderr, ErrorClass::Usage, msg);
        }
    };
    let outcome = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, stdout),
        Command::Simulate(s) => cmd_simulate(s, stdout),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => report_error(stderr, e.class(), &e.to_string()),
    }
}
