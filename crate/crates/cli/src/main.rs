use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spt_core::config::{ExperimentConfig, RawConfig};
use spt_core::experiment::{run_ingest, run_simulate, run_strategy, run_verify, with_threads, RunError};
use spt_core::zoo;

#[derive(Parser)]
#[command(name = "spt", version, about = "Market-weight diffusions, generated strategies and arbitrage checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Model catalogue.
    Zoo {
        #[command(subcommand)]
        action: ZooCmd,
    },
    /// Simulate an ensemble; writes ensemble.csv and simulate.json.
    Simulate(RunArgs),
    /// Run a strategy over an ensemble; writes strategy.csv and strategy.json.
    Strategy(RunArgs),
    /// Identity suite and arbitrage verdict; writes verify.json. Exits 2 when
    /// an identity fails.
    Verify(RunArgs),
    /// Empirical cumulative excess growth of a capitalization CSV.
    Ingest {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ZooCmd {
    List,
    Describe { id: String },
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, RunError> {
    let mut raw = RawConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        raw.seed = Some(s);
    }
    if let Some(o) = &args.out {
        raw.out = Some(o.clone());
    }
    Ok(raw.resolve()?)
}

fn run(cmd: Cmd) -> Result<ExitCode, RunError> {
    match cmd {
        Cmd::Zoo { action: ZooCmd::List } => {
            for e in zoo::list() {
                println!("{:<18} {}", e.id, e.summary);
            }
        }
        Cmd::Zoo { action: ZooCmd::Describe { id } } => print!("{}", zoo::describe(&id)?),
        Cmd::Simulate(a) => {
            let exp = load(&a)?;
            let r = with_threads(exp.threads, || run_simulate(&exp))??;
            println!(
                "{} paths, {} hit the boundary; wrote {}",
                r.n_paths,
                r.hitting.n_hit,
                exp.out.display()
            );
        }
        Cmd::Strategy(a) => {
            let exp = load(&a)?;
            let r = with_threads(exp.threads, || run_strategy(&exp))??;
            println!(
                "{}: {:?}, mean V(T) = {}; wrote {}",
                r.strategy,
                r.verdict.class,
                r.verdict.mean,
                exp.out.display()
            );
        }
        Cmd::Verify(a) => {
            let exp = load(&a)?;
            let r = with_threads(exp.threads, || run_verify(&exp))??;
            for c in &r.identities {
                println!(
                    "{} {:<34} max_dev {:e} tol {:e}",
                    if c.pass { "ok  " } else { "FAIL" },
                    c.name,
                    c.max_dev,
                    c.tol
                );
            }
            if !r.pass {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Ingest { file, out } => {
            let s = run_ingest(&file, &out)?;
            println!("total {} eta_hat {} slope_check {}", s.total, s.eta_hat, s.slope_check.holds);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
