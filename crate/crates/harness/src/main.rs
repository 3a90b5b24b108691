use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crw_harness::config::{parse_config, Experiment};
use crw_harness::run::{self, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "crw", version, about = "Run random-walk experiments and replay their replicates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deviation tails of the environment increments.
    EnvTail(RunArgs),
    /// Plain walk runs with per-replicate summaries.
    Simulate(RunArgs),
    /// Diffusive scaling of the walk.
    Invariance(RunArgs),
    /// Coupling with a delayed simple random walk.
    Coupling(RunArgs),
    /// Linear displacement bound.
    Range(RunArgs),
    /// Range over the window [T^alpha, T^beta].
    IntermediateRange(RunArgs),
    /// Re-derive one replicate of a finished run.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to the config, then CRW_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; falls back to the config, then `crw-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Ladder rung (length index for env-tail).
    #[arg(long, default_value_t = 0)]
    rung: usize,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

fn default_workers() -> usize {
    std::env::var("CRW_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run(experiment: Experiment, args: RunArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let (mut cfg, settings) = match parse_config(&text, Some(experiment)) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if args.workers == Some(0) {
        eprintln!("error: --workers must be positive");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let workers = args.workers.or(settings.workers).unwrap_or_else(default_workers);
    let out = args
        .out
        .or(settings.output_dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("crw-out"));

    match run::run_experiment(&cfg, workers, &out) {
        Ok(outcome) => {
            for r in &outcome.reports {
                println!("{:<32} {:>5}  statistic = {:.6}", r.test_name, if r.pass { "PASS" } else { "FAIL" }, r.statistic);
            }
            let m = &outcome.manifest;
            println!(
                "{} replicates ({} flagged), outputs in {}",
                m.replicates_total,
                m.replicates_flagged,
                out.display()
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let experiment = match cli.command {
        Command::EnvTail(a) => return run(Experiment::EnvTail, a),
        Command::Simulate(a) => return run(Experiment::Simulate, a),
        Command::Invariance(a) => return run(Experiment::Invariance, a),
        Command::Coupling(a) => return run(Experiment::Coupling, a),
        Command::Range(a) => return run(Experiment::Range, a),
        Command::IntermediateRange(a) => return run(Experiment::IntermediateRange, a),
        Command::Replay(a) => a,
    };
    match run::replay(&experiment.manifest, experiment.rung, experiment.replicate) {
        Ok(replayed) => {
            for row in &replayed.rows {
                println!("{}", row.to_json());
            }
            match replayed.matches_summary {
                Some(true) => {
                    println!("matches summary.csv");
                    ExitCode::SUCCESS
                }
                Some(false) => {
                    eprintln!("replayed rows differ from summary.csv");
                    ExitCode::FAILURE
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
