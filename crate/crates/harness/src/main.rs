use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use asgd_harness::commands;
use asgd_harness::ExperimentConfig;
use clap::{Parser, Subcommand};

/// Accelerated vs plain SGD on streaming least squares.
#[derive(Parser)]
#[command(name = "asgd-lab", version)]
struct Cli {
    /// Base seed; overrides `base_seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV and plot output.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print mu, R^2, kappa and the statistical condition number.
    Condnum {
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Run the experiment and write CSV plus plot script.
    Run { config: PathBuf },
    /// Evaluate the risk bound term by term over the n grid.
    Bound {
        config: PathBuf,
        /// Universal constant multiplying the non-leading terms.
        #[arg(long, default_value_t = 1.0)]
        constant: f64,
    },
    /// Run the verification suite.
    Verify {
        /// Single dimension to check (default: 1 through 4).
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Compare exact tail-covariance predictions against simulation.
    Predict {
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        runs: usize,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    Ok(cfg)
}

/// `Ok(failing check names)`; empty means success.
fn dispatch(cli: &Cli) -> Result<Vec<String>> {
    match &cli.command {
        Command::Condnum { config, samples } => {
            let cfg = load(config, cli.seed)?;
            print!("{}", commands::condnum(&cfg, *samples, cfg.base_seed)?);
        }
        Command::Run { config } => {
            let cfg = load(config, cli.seed)?;
            let art = commands::run(&cfg, &cli.out_dir)?;
            print!("{}", commands::summarize(&art.table));
            println!("wrote {} and {}", art.csv.display(), art.plot.display());
        }
        Command::Bound { config, constant } => {
            let cfg = load(config, cli.seed)?;
            print!("{}", commands::bound(&cfg, *constant)?);
        }
        Command::Verify { d, trials } => {
            let dims: Vec<usize> = d.map_or_else(|| (1..=4).collect(), |d| vec![d]);
            let out = commands::verify(&dims, *trials, cli.seed.unwrap_or(0))?;
            print!("{}", out.text);
            return Ok(out.failing);
        }
        Command::Predict { config, runs } => {
            let cfg = load(config, cli.seed)?;
            let out = commands::predict(&cfg, *runs, cfg.base_seed)?;
            print!("{}", out.text);
            return Ok(out.failing);
        }
    }
    Ok(Vec::new())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(failing) if failing.is_empty() => ExitCode::SUCCESS,
        Ok(failing) => {
            eprintln!("failing checks: {}", failing.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
