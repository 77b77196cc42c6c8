use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tagcourt::config::{BackendConfig, PipelineConfig};
use tagcourt::court::CourtMode;
use tagcourt::pipeline::{Pipeline, Stage};
use tagcourt::Error;

#[derive(Parser)]
#[command(name = "tagcourt", version, about = "Anomaly detection on text-attributed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON pipeline config; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, mixed into every module seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clean planted-partition graph.
    GenSynth,
    /// Plant contextual and structural anomalies.
    Inject,
    /// Embed node texts.
    Embed,
    /// Run the prosecutors and judge, then embed the verdicts.
    Court(CourtArgs),
    /// Train the fusion detector.
    Train,
    /// Score every node.
    Score,
    /// ROC-AUC, AP and the ROC curve against the labels.
    Eval,
    /// Extrapolate Stage I cost and wall time.
    EstimateCost,
    /// Every stage in order.
    RunAll,
}

#[derive(Args)]
struct CourtArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Evidence store directory.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    OneProsecutor,
    TwoProsecutors,
    FullCourt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Http,
    Oracle,
}

fn apply_court_args(cfg: &mut PipelineConfig, args: &CourtArgs) -> Result<(), Error> {
    if let Some(mode) = args.mode {
        cfg.court.court_mode = match mode {
            ModeArg::OneProsecutor => CourtMode::OneProsecutor,
            ModeArg::TwoProsecutors => CourtMode::TwoProsecutors,
            ModeArg::FullCourt => CourtMode::FullCourt,
        };
    }
    if let Some(p) = args.parallelism {
        cfg.court.parallelism = p;
    }
    if let Some(store) = &args.store {
        cfg.paths.store = Some(store.clone());
    }
    match (args.backend, &cfg.backend) {
        (Some(BackendArg::Oracle), BackendConfig::Http(_)) => cfg.backend = BackendConfig::default(),
        (Some(BackendArg::Http), BackendConfig::Oracle { .. }) => {
            return Err(Error::InvalidConfig(
                "--backend http needs a backend section with \"type\": \"http\" and an endpoint in the config".into(),
            ))
        }
        _ => {}
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Court(args) = &cli.command {
        apply_court_args(&mut cfg, args)?;
    }
    cfg.validate()?;
    if cli.print_config {
        println!("{}", cfg.to_pretty_json());
        return Ok(());
    }
    let pipeline = Pipeline::new(cfg)?;
    let stage = match cli.command {
        Command::GenSynth => Stage::GenSynth,
        Command::Inject => Stage::Inject,
        Command::Embed => Stage::Embed,
        Command::Court(_) => Stage::Court,
        Command::Train => Stage::Train,
        Command::Score => Stage::Score,
        Command::Eval => Stage::Eval,
        Command::EstimateCost => Stage::EstimateCost,
        Command::RunAll => return pipeline.run_all(),
    };
    pipeline.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
