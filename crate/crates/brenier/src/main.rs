use std::path::PathBuf;
use std::process::ExitCode;

use brenier::commands::{self, StdClock};
use brenier::config::{EstimateConfig, SuiteConfig};
use brenier::{io, Error, Result};
use brenier_core::metrics::GridSpec;
use brenier_core::train::Clock;
use clap::{Parser, Subcommand};

/// Optimal transport maps and densities from input-convex potentials.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a transport map between two densities.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Permit dimensions of 8 and above.
        #[arg(long)]
        allow_high_dim: bool,
    },
    /// Run a suite of reference problems and tabulate the errors.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the suite's dimensions, e.g. `2,3,5`.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Override the number of seeds per cell.
        #[arg(long)]
        seeds: Option<usize>,
        /// Runs in parallel; reports do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        allow_high_dim: bool,
    },
    /// Fit a density to samples by maximum likelihood.
    Estimate {
        /// CSV of samples with header x0,...,x{d-1}.
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Background density file (JSON, or TOML by extension).
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long)]
        allow_high_dim: bool,
    },
    /// Draw samples from a fitted model through its inverse map.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export density and map grids of a 2-d model.
    Grid {
        #[arg(long)]
        model: PathBuf,
        /// `lo,hi` for both axes or `x_lo,x_hi,y_lo,y_hi`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-4,4")]
        bounds: Vec<f64>,
        /// Nodes per axis, or `nx,ny`.
        #[arg(long, value_delimiter = ',', default_value = "200")]
        res: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn grid_spec(bounds: &[f64], res: &[usize]) -> Result<GridSpec> {
    let (lo, hi) = match *bounds {
        [a, b] => ([a, a], [b, b]),
        [a, b, c, d] => ([a, c], [b, d]),
        _ => return Err(Error::Config("--bounds takes 2 or 4 numbers".into())),
    };
    let res = match *res {
        [n] => [n, n],
        [nx, ny] => [nx, ny],
        _ => return Err(Error::Config("--res takes 1 or 2 integers".into())),
    };
    let grid = GridSpec { lo, hi, res };
    grid.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(grid)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve {
            config,
            out,
            allow_high_dim,
        } => {
            let mut cfg: brenier::config::SolveConfig = brenier::config::load(&config)?;
            cfg.allow_high_dim |= allow_high_dim;
            let run = commands::solve(&cfg, &out)?;
            match &run.report {
                Some(r) => println!(
                    "L2-UVP {:.4}  W2 {:.6} (true {})  inverse consistency {:.3e}",
                    r.l2_uvp,
                    r.w2_est,
                    r.w2_true.map_or("unknown".into(), |t| format!("{t:.6}")),
                    run.pair.inverse_consistency
                ),
                None => println!("W2 estimate unavailable without a reference map; models in {}", out.display()),
            }
            Ok(())
        }
        Command::Benchmark {
            config,
            out,
            dims,
            seeds,
            jobs,
            allow_high_dim,
        } => {
            let mut suite: SuiteConfig = brenier::config::load(&config)?;
            if let Some(d) = dims {
                suite.dims = d;
            }
            if let Some(s) = seeds {
                suite.seeds = s;
            }
            suite.allow_high_dim |= allow_high_dim;
            let clock = StdClock::start();
            let outcome = commands::benchmark(&suite, &out, jobs)?;
            println!(
                "{} runs in {:.0}s, report at {}",
                outcome.records.len(),
                clock.elapsed_secs(),
                outcome.report_path.display()
            );
            match outcome.failed() {
                0 => Ok(()),
                failed => Err(Error::PartialFailure {
                    failed,
                    total: outcome.records.len(),
                }),
            }
        }
        Command::Estimate {
            samples,
            out,
            config,
            background,
            allow_high_dim,
        } => {
            let mut cfg: EstimateConfig = match &config {
                Some(p) => brenier::config::load(p)?,
                None => EstimateConfig::default(),
            };
            cfg.allow_high_dim |= allow_high_dim;
            cfg.validate()?;
            let data = io::load_samples(&samples)?;
            let bg = background.as_deref().map(io::load_density).transpose()?;
            let est = commands::estimate(&data, &cfg, bg, &out)?;
            if let Some(nll) = est.heldout_nll {
                println!("held-out NLL {nll:.4}");
            }
            Ok(())
        }
        Command::Sample { model, n, seed, out } => {
            let dir = commands::load_model_dir(&model)?;
            let xs = commands::sample(&dir, n, seed)?;
            io::save_samples(&out, &xs)
        }
        Command::Grid {
            model,
            bounds,
            res,
            out,
        } => {
            let grid = grid_spec(&bounds, &res)?;
            let dir = commands::load_model_dir(&model)?;
            commands::write_grid_file(&out, &dir.forward, &dir.background, &grid)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

