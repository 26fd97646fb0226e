use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fedprio::cli;
use fedprio::{AggregatorKind, Overrides, Study};

/// Federated-learning simulator with prioritized multi-criteria client
/// weighting.
///
/// The worker thread count can be set with FEDPRIO_THREADS.
#[derive(Debug, Parser)]
#[command(name = "fedprio", version)]
struct Args {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// individual | mca-fixed | final-adjusted | fedavg-baseline
    #[arg(long)]
    study: Option<Study>,

    /// Comma-separated criterion ids, most important first (e.g. ds,ld,md).
    #[arg(long, value_delimiter = ',')]
    ordering: Option<Vec<String>>,

    /// fedavg | prioritized; must agree with the study.
    #[arg(long)]
    aggregator: Option<AggregatorKind>,

    /// Maximum rounds of communication.
    #[arg(long)]
    rounds: Option<usize>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Run every ordering of the criteria, one sub-directory each.
    #[arg(long)]
    sweep: bool,

    /// Run all studies over --seeds and write a rounds-to-target table.
    #[arg(long)]
    table: bool,

    /// Seeds for --table (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,

    /// Check the config and report every problem without running.
    #[arg(long)]
    validate_only: bool,
}

fn init_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("FEDPRIO_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| format!("FEDPRIO_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    let overrides = Overrides {
        seed: args.seed,
        study: args.study,
        ordering: args.ordering,
        aggregator: args.aggregator,
        rounds: args.rounds,
        out: args.out,
        sweep: args.sweep.then_some(true),
    };
    let cfg = match cli::load_with_overrides(args.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };

    if args.validate_only {
        let violations = cfg.validate();
        if violations.is_empty() {
            println!("ok");
            return ExitCode::SUCCESS;
        }
        for v in &violations {
            println!("{v}");
        }
        return ExitCode::FAILURE;
    }

    if args.table {
        return match cli::run_table(&cfg, &args.seeds) {
            Ok(table) => {
                print!("{}", table.render());
                println!("wrote {}", cfg.output.dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }

    match cli::run(&cfg) {
        Ok(dirs) => {
            for d in dirs {
                println!("wrote {}", d.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
