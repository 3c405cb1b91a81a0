use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coteach::harness::{run_experiment, run_sweep, sweep_table_csv, ExperimentConfig};
use coteach::noise::{NoiseKind, TransitionMatrix};
use coteach::strategies::Strategy;
use coteach::{CoteachError, Result};

#[derive(Debug, Parser)]
#[command(name = "coteach", version, about = "Robust training under label noise")]
struct Cli {
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration and write metrics.csv + summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run several strategies over several trials on the same noisy data.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, e.g. `standard,coteaching,coteaching_plus`.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Cells trained concurrently (defaults to the number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print a transition matrix in the text format accepted by `custom` noise.
    MakeNoise {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        classes: usize,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cli.out.unwrap_or_else(|| cfg.output_dir.clone());
            let summary = run_experiment(&cfg, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
        }
        Command::Sweep {
            config,
            strategies,
            trials,
            jobs,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let strategies = strategies
                .iter()
                .map(|s| s.trim().parse::<Strategy>())
                .collect::<Result<Vec<_>>>()?;
            let out = cli.out.unwrap_or_else(|| cfg.output_dir.clone());
            let jobs = jobs.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            let result = run_sweep(&cfg, &strategies, trials, &out, jobs)?;
            print!("{}", sweep_table_csv(&result.rows));
        }
        Command::MakeNoise { kind, tau, classes } => {
            let kind: NoiseKind = kind.parse()?;
            if kind == NoiseKind::Custom {
                return Err(CoteachError::Input(
                    "make-noise builds symmetric, pair or identity matrices".into(),
                ));
            }
            print!("{}", TransitionMatrix::build(kind, tau, classes)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coteach: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
