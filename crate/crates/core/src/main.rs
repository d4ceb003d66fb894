use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hazard_lattice::cli::{self, RunArgs, Study};

#[derive(Parser)]
#[command(name = "hazard-lattice", version, about = "Defaultable equity derivatives on a hazard-adjusted lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price a claim on the discrete lattice.
    PriceDiscrete(Common),
    /// Price a claim in the continuous model (closed form, PDE or Euler MC).
    PriceContinuous(Common),
    /// Simulate default times, survival curves and martingale checks.
    Simulate(Common),
    /// Convergence study of lattice prices, distributions and moments.
    Converge(Common),
    /// Distributional distance between lattice and continuous paths.
    FddTest(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.lambda=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (study, common) = match cli.command {
        Command::PriceDiscrete(c) => (Study::PriceDiscrete, c),
        Command::PriceContinuous(c) => (Study::PriceContinuous, c),
        Command::Simulate(c) => (Study::Simulate, c),
        Command::Converge(c) => (Study::Converge, c),
        Command::FddTest(c) => (Study::FddTest, c),
    };
    let args = RunArgs {
        study,
        config: common.config,
        overrides: common.overrides,
        out: common.out,
        seed: common.seed,
        threads: common.threads,
    };
    let result = cli::run(&args);
    match &result {
        Ok(outcome) => {
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            println!("verdict: {}", outcome.verdict.tag());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(cli::exit_code(&result) as u8)
}
