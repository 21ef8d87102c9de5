//! Command-line front end: fixture generation, experiment runs, bound
//! calculators, the fidelity experiment, and stream validation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stream validation error,
//! 4 deletion capacity exhausted mid-run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mempair::harness::{self, ExperimentConfig};
use mempair::model::LossKind;
use mempair::pair::MemoryPairConfig;
use mempair::stream::{self, DeletePattern, SegmentSpec};
use mempair::theory::{self, BoundInputs};
use mempair::MpError;

#[derive(Parser)]
#[command(name = "mpair", version, about = "Stream-native learning/unlearning experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream fixture from a generator config.
    Gen(GenArgs),
    /// Replay streams through the configured algorithms and write reports.
    Run(RunArgs),
    /// Evaluate the closed-form bound calculators.
    Bounds(BoundsArgs),
    /// Run the delete-vs-retrain fidelity experiment.
    Fidelity(FidelityArgs),
    /// Validate stream files (format and referential integrity).
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator config (JSON, see README).
    #[arg(long)]
    config: PathBuf,
    /// Output stream path; `.gz` suffix enables compression.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Bound inputs (JSON serialization of the calculator inputs).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Args)]
struct FidelityArgs {
    /// Fidelity config (JSON, see README).
    #[arg(long)]
    config: PathBuf,
    /// Optional report path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Stream files to validate.
    #[arg(required = true)]
    streams: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GeneratorKind {
    Stationary { n: u64 },
    Drift { segments: Vec<SegmentSpec> },
}

#[derive(Serialize, Deserialize)]
struct GenConfig {
    #[serde(flatten)]
    kind: GeneratorKind,
    seed: u64,
    d: usize,
    noise_std: f64,
    diameter: f64,
    loss: LossKind,
    #[serde(default)]
    deletions: Option<DeletionRequest>,
}

#[derive(Serialize, Deserialize)]
struct DeletionRequest {
    m: u64,
    pattern: DeletePattern,
}

#[derive(Serialize, Deserialize)]
struct FidelityConfig {
    stream: PathBuf,
    delete_index: usize,
    trials: u64,
    noise: bool,
    pair: MemoryPairConfig,
}

fn exit_code_for(err: &MpError) -> u8 {
    match err {
        MpError::Config(_) | MpError::InvalidParameter(_) | MpError::Json(_) => 2,
        MpError::MalformedRecord { .. } | MpError::StreamValidation { .. } => 3,
        MpError::CapacityExhausted { .. } => 4,
        _ => 1,
    }
}

fn run_gen(args: GenArgs) -> Result<(), MpError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: GenConfig = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (manifest, events) = match &config.kind {
        GeneratorKind::Stationary { n } => stream::gen_stationary(
            config.seed,
            *n,
            config.d,
            config.noise_std,
            config.diameter,
            config.loss,
        ),
        GeneratorKind::Drift { segments } => stream::gen_drift(
            config.seed,
            segments,
            config.d,
            config.noise_std,
            config.diameter,
            config.loss,
        )?,
    };
    let (manifest, events) = match &config.deletions {
        Some(req) => stream::gen_delete_schedule(&manifest, &events, req.m, req.pattern)?,
        None => (manifest, events),
    };
    stream::write_stream(&args.out, &manifest, &events)?;
    eprintln!("wrote {} events to {}", events.len(), args.out.display());
    Ok(())
}

fn run_run(args: RunArgs) -> Result<(), MpError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    let summary = harness::run_experiment(&config)?;
    for (algo, avg) in &summary.final_average_regret {
        eprintln!("{algo}: final average regret {avg:.6}");
    }
    eprintln!("reports written to {}", config.out_dir.display());
    Ok(())
}

fn run_bounds(args: BoundsArgs) -> Result<(), MpError> {
    let text = std::fs::read_to_string(&args.config)?;
    let inputs: BoundInputs = serde_json::from_str(&text)?;
    let rows = [
        ("static_regret_bound", theory::static_regret_bound(&inputs)),
        ("dynamic_regret_bound", theory::dynamic_regret_bound(&inputs)),
        ("adagrad_regret_bound", theory::adagrad_regret_bound(&inputs)),
        (
            "deletion_capacity",
            theory::deletion_capacity(&inputs) as f64,
        ),
        (
            "deletion_capacity_worstcase",
            theory::deletion_capacity_worstcase(&inputs) as f64,
        ),
        (
            "sample_complexity",
            theory::sample_complexity(&inputs) as f64,
        ),
    ];
    match args.format {
        OutputFormat::Csv => {
            println!("bound,value");
            for (name, value) in rows {
                println!("{name},{value}");
            }
        }
        OutputFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> = rows
                .into_iter()
                .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
                .collect();
            println!("{}", serde_json::to_string_pretty(&map)?);
        }
    }
    Ok(())
}

fn run_fidelity(args: FidelityArgs) -> Result<(), MpError> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: FidelityConfig = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        config.pair.seed = seed;
    }
    let (manifest, events) = stream::read_stream(&config.stream)?;
    stream::validate_stream(&manifest, &events)?;
    let points = harness::insert_points(&events);
    let report = harness::fidelity_experiment(
        &points,
        config.delete_index,
        config.trials,
        config.noise,
        &config.pair,
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    match args.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run_validate(args: ValidateArgs) -> Result<(), MpError> {
    for path in &args.streams {
        let (manifest, events) = stream::read_stream(path)?;
        stream::validate_stream(&manifest, &events)?;
        println!("{}: ok ({} events)", path.display(), events.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Run(args) => run_run(args),
        Command::Bounds(args) => run_bounds(args),
        Command::Fidelity(args) => run_fidelity(args),
        Command::Validate(args) => run_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
