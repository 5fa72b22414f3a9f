use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gossip_blocks::harness::{
    analysis_report, monte_carlo_stationarity, run_block_detection, run_karate_experiment,
    simulate_to_csv, write_accuracy_csv, write_detect_csv, DetectionRun, MonteCarloConfig,
};
use gossip_blocks::model::{BlockModel, GossipNetwork, ModelConfig, ModelError, StubbornPrior};

/// Two-community gossip opinion dynamics: validation, closed-form analysis,
/// simulation, and online community detection.
#[derive(Parser)]
#[command(name = "gossip-blocks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file; exit 1 when it has hard violations.
    Validate(ValidateArgs),
    /// Closed-form stationary analysis of a model (JSON report).
    Analyze(AnalyzeArgs),
    /// Simulate one trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Run the online detector over a simulated trajectory of a model.
    Detect(DetectArgs),
    /// Run the online detector on the bundled karate-club network.
    Karate(KarateArgs),
    /// Monte Carlo consistency check of the simulator against the closed
    /// forms; exit 1 when any check fails.
    Montecarlo(MonteCarloArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Model description (JSON).
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Model description (JSON).
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Output file (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model description (JSON).
    #[arg(long, value_name = "FILE", required_unless_present = "edges", conflicts_with = "edges")]
    model: Option<PathBuf>,
    /// Edge list (`i j` or `i j weight` per line, 1-based ids,
    /// `#` comments; unweighted edges get weight 1/(2|E|)).
    #[arg(long, value_name = "FILE")]
    edges: Option<PathBuf>,
    /// Stubborn agents for --edges, as `id=opinion,...` (1-based ids).
    #[arg(long, value_name = "LIST", requires = "edges")]
    stubborn: Option<String>,
    /// Trajectory length in steps.
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    /// Log every K-th step (t = 0 and the final step always included).
    #[arg(long, value_name = "K", default_value_t = 100)]
    log_every: u64,
    /// Master seed; defaults to the model file's seed, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Write only the regular agents' columns.
    #[arg(long)]
    regular_only: bool,
    /// Output file (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Model description (JSON).
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Trajectory length in steps.
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    /// Log every K-th step.
    #[arg(long, value_name = "K", default_value_t = 100)]
    log_every: u64,
    /// Master seed; defaults to the model file's seed, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Anchor file overriding the default anchors (`stubborn_id anchor_id`
    /// per line, 1-based).
    #[arg(long, value_name = "FILE")]
    anchors: Option<PathBuf>,
    /// Write the per-step log (t,w_s_hat,w_d_hat,labels_changed,accuracy)
    /// to this CSV file.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Summary JSON output (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KarateArgs {
    /// Trajectory length in steps.
    #[arg(long, default_value_t = 1_000_000)]
    steps: u64,
    /// Log every K-th step.
    #[arg(long, value_name = "K", default_value_t = 100)]
    log_every: u64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the accuracy trace (t,accuracy,w_s_hat,w_d_hat) to this CSV
    /// file.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Summary JSON output (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonteCarloArgs {
    /// Model description (JSON).
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Independent replications for the fixed-horizon check.
    #[arg(long, default_value_t = 2_000)]
    replications: usize,
    /// Steps per replication.
    #[arg(long, default_value_t = 2_000)]
    horizon: u64,
    /// Steps of the single long run for the time-average check.
    #[arg(long, default_value_t = 1_000_000)]
    ergodic_steps: u64,
    /// Batches for the time-average standard error.
    #[arg(long, default_value_t = 100)]
    batches: usize,
    /// Absolute tolerance for the time-average check.
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    /// Master seed; defaults to the model file's seed, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Report JSON output (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// A failed run: either the inputs were rejected (exit 1) or something went
/// wrong while running (exit 2).
enum Failure {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Runtime(err)
    }
}

impl From<gossip_blocks::harness::HarnessError> for Failure {
    fn from(err: gossip_blocks::harness::HarnessError) -> Self {
        Failure::Runtime(anyhow::Error::new(err))
    }
}

impl From<ModelError> for Failure {
    fn from(err: ModelError) -> Self {
        // Anything wrong with user-supplied model inputs is a validation
        // failure; only I/O and internal faults count as runtime errors.
        Failure::Validation(err.to_string())
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("invalid input: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate(args) => {
            let config = load_config(&args.model)?;
            let report = config.model().validate();
            print!("{report}");
            if report.is_ok() {
                Ok(())
            } else {
                Err(Failure::Validation(format!(
                    "{} violation(s) in {}",
                    report.violations.len(),
                    args.model.display()
                )))
            }
        }
        Command::Analyze(args) => {
            let model = load_valid_model(&args.model)?;
            let report = analysis_report(&model)?;
            write_json(&report, args.out.as_deref())?;
            Ok(())
        }
        Command::Simulate(args) => {
            let (net, file_seed) = match (&args.model, &args.edges) {
                (Some(path), None) => {
                    let config = load_config(path)?;
                    let model = valid_model(config.model(), path)?;
                    (model.to_network()?, config.seed)
                }
                (None, Some(path)) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let net = GossipNetwork::from_edge_list(&text)?;
                    let net = match &args.stubborn {
                        Some(list) => net.with_stubborn(&parse_stubborn(list)?)?,
                        None => net,
                    };
                    (net, None)
                }
                _ => unreachable!("clap enforces exactly one input"),
            };
            let seed = args.seed.or(file_seed).unwrap_or(0);
            with_output(args.out.as_deref(), |out| {
                simulate_to_csv(&net, args.steps, args.log_every, args.regular_only, seed, out)
                    .map(|_| ())
                    .map_err(Failure::from)
            })
        }
        Command::Detect(args) => {
            let config = load_config(&args.model)?;
            let model = valid_model(config.model(), &args.model)?;
            let prior = match &args.anchors {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    Some(StubbornPrior::from_text(&text)?)
                }
                None => None,
            };
            let seed = args.seed.or(config.seed).unwrap_or(0);
            let run = run_block_detection(&model, prior, args.steps, args.log_every, seed)?;
            finish_detection(run, args.log.as_deref(), args.out.as_deref(), false)
        }
        Command::Karate(args) => {
            let run = run_karate_experiment(args.steps, args.log_every, args.seed)?;
            finish_detection(run, args.log.as_deref(), args.out.as_deref(), true)
        }
        Command::Montecarlo(args) => {
            let config = load_config(&args.model)?;
            let model = valid_model(config.model(), &args.model)?;
            let mc = MonteCarloConfig {
                replications: args.replications,
                horizon: args.horizon,
                ergodic_steps: args.ergodic_steps,
                batches: args.batches,
                ergodic_tolerance: args.tolerance,
                seed: args.seed.or(config.seed).unwrap_or(0),
            };
            let report = monte_carlo_stationarity(&model, &mc)?;
            write_json(&report, args.out.as_deref())?;
            if report.pass {
                Ok(())
            } else {
                Err(Failure::Validation(
                    "simulator disagrees with the closed-form stationary values".to_string(),
                ))
            }
        }
    }
}

fn load_config(path: &Path) -> Result<ModelConfig, Failure> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|err| Failure::Validation(format!("{}: {err}", path.display())))
}

fn valid_model(model: BlockModel, path: &Path) -> Result<BlockModel, Failure> {
    let report = model.validate();
    if report.is_ok() {
        for warning in &report.warnings {
            eprintln!("warning: {warning}");
        }
        Ok(model)
    } else {
        Err(Failure::Validation(format!(
            "{}: {}",
            path.display(),
            report.violations.join("; ")
        )))
    }
}

fn load_valid_model(path: &Path) -> Result<BlockModel, Failure> {
    valid_model(load_config(path)?.model(), path)
}

fn parse_stubborn(list: &str) -> Result<Vec<(usize, f64)>, Failure> {
    let mut out = Vec::new();
    for part in list.split(',') {
        let invalid = || {
            Failure::Validation(format!(
                "bad stubborn entry `{part}`; expected `id=opinion` with a 1-based id"
            ))
        };
        let (id, opinion) = part.split_once('=').ok_or_else(invalid)?;
        let id: usize = id.trim().parse().map_err(|_| invalid())?;
        let opinion: f64 = opinion.trim().parse().map_err(|_| invalid())?;
        if id == 0 {
            return Err(invalid());
        }
        out.push((id - 1, opinion));
    }
    Ok(out)
}

fn finish_detection(
    run: DetectionRun,
    log: Option<&Path>,
    out: Option<&Path>,
    accuracy_columns: bool,
) -> Result<(), Failure> {
    if let Some(path) = log {
        let file = fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(Failure::from)?;
        let mut writer = BufWriter::new(file);
        if accuracy_columns {
            write_accuracy_csv(&run.trace, &mut writer)
        } else {
            write_detect_csv(&run.trace, &mut writer)
        }
        .context("writing trace")?;
        writer.flush().context("writing trace")?;
    }
    write_json(&run.report, out)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .context("serializing report")?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_output<F>(out: Option<&Path>, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> Result<(), Failure>,
{
    match out {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(Failure::from)?;
            let mut writer = BufWriter::new(file);
            body(&mut writer)?;
            writer.flush().context("flushing output").map_err(Failure::from)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)
        }
    }
}
