//! Command-line front end for the trans-dimensional samplers, the Monte
//! Carlo error pipeline and the finite-chain verifier.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::Config;

#[derive(Parser)]
#[command(name = "transdim", version, about = "Reversible jump samplers with simultaneous Monte Carlo error bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Laplace-error autoregression data set
    SimulateAr(Settings),
    /// Run a sampler, write its trace and a simultaneous-interval report
    Run(Settings),
    /// Empirical joint coverage over replicated toy chains
    Coverage(Settings),
    /// Check the spectral bounds on a chain file or a random ensemble
    FiniteVerify(Settings),
    /// Turn a report into a tab-separated plotting table
    Plotdata(Settings),
}

#[derive(Args)]
struct Settings {
    /// TOML file of key-value settings
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides of the form `--key value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl Settings {
    fn load(&self) -> Result<Config> {
        Config::load(self.config.as_deref(), &self.overrides)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SimulateAr(s) => commands::simulate_ar(&s.load()?),
        Command::Run(s) => commands::run(&s.load()?),
        Command::Coverage(s) => commands::coverage(&s.load()?),
        Command::FiniteVerify(s) => commands::finite_verify(&s.load()?),
        Command::Plotdata(s) => commands::plotdata(&s.load()?),
    }
}
