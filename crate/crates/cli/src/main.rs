mod commands;
mod config;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fail-lfo", version, about = "Imitation from observation experiments on finite-horizon MDPs")]
struct Cli {
    /// TOML experiment config (required by gen-expert and train).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use seeds 0..N instead of the config list.
    #[arg(long, global = true)]
    seed_count: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks the core count.
    #[arg(long, global = true, env = "FAIL_LFO_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write expert demonstrations and a manifest per seed.
    GenExpert,
    /// Train on every seed and write reports, transcripts and summary.csv.
    Train,
    /// Tree identification against random search.
    Separation {
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12")]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        rl_budget_factor: f64,
    },
    /// Dataset overlap and empirical distance on the two-half construction.
    CapacityDemo {
        #[arg(long, value_delimiter = ',', default_value = "100,10000,1000000")]
        states: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Cross-check the Lipschitz program against independent solvers.
    LpCheck {
        /// Largest number of points per side; an empty value gives an empty table.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        sizes: Vec<String>,
    },
    /// Summarize game transcripts written by train.
    Report {
        /// Directory with transcript files; defaults to --out.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_deref().context("this command needs --config")?;
    ExperimentConfig::load(path)?.resolve(cli.seed_count, cli.out.clone())
}

fn run(cli: Cli) -> Result<()> {
    let seeds: Vec<u64> = (0..cli.seed_count.unwrap_or(10)).collect();
    let out = cli.out.as_deref();
    match &cli.command {
        Command::GenExpert => commands::gen_expert(&load(&cli)?, cli.jobs),
        Command::Train => commands::train(&load(&cli)?, cli.jobs),
        Command::Separation { horizons, rl_budget_factor } => {
            commands::separation(horizons, *rl_budget_factor, &seeds, cli.jobs, out)
        }
        Command::CapacityDemo { states, samples } => commands::capacity(states, *samples, &seeds, cli.jobs, out),
        Command::LpCheck { sizes } => {
            let sizes = sizes
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad size {s:?}")))
                .collect::<Result<Vec<_>>>()?;
            commands::lp_check(&sizes, &seeds, cli.jobs, out)
        }
        Command::Report { input } => {
            let dir = input.as_deref().or(out).context("report needs --input or --out")?;
            commands::report(dir)
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
