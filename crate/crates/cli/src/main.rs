use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use soda::env_pointnav::DemoQuality;

mod commands;
mod config;

use commands::{Axis, BaselineKind, InitKind};
use config::{ExperimentConfig, Usage};

#[derive(Parser)]
#[command(name = "soda", version, about = "Demonstration-warm-started value learning experiments")]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `easy`, `medium`, `hard`, `pointnav` or a grid map file.
    #[arg(long, global = true)]
    env: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the oracle (grids) or a scripted controller (pointnav) and save JSONL demos.
    CollectDemos {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        quality: Option<DemoQuality>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Tabular Q-learning from a zero or demonstration-initialised table.
    TrainTabular {
        #[arg(long, value_enum, default_value = "warm")]
        init: InitKind,
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Value-network agent with separate demo and online replay.
    TrainSoda {
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Cold-start or mixed-batch network baseline.
    TrainBaseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Uniform and on-policy regret of warm, cold and converged tables, plus visitation heatmaps.
    RegretReport,
    /// Sweep demonstration count or quality.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Greedy success rate of a saved network (`.ckpt`) or Q-table (`.csv`).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &cli.seed_list {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(env) = &cli.env {
        cfg.env = Some(env.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::CollectDemos { n, quality, output } => commands::collect_demos(&cfg, n, quality, output),
        Command::TrainTabular { init, demos } => commands::train_tabular(&cfg, init, demos.as_deref()),
        Command::TrainSoda { demos } => commands::train_soda_cmd(&cfg, demos.as_deref()),
        Command::TrainBaseline { kind, demos } => commands::train_baseline(&cfg, kind, demos.as_deref()),
        Command::RegretReport => commands::regret_report(&cfg),
        Command::Ablate { axis } => commands::ablate(&cfg, axis),
        Command::Eval { checkpoint, episodes } => commands::eval(&cfg, &checkpoint, episodes),
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<Usage>() || cause.downcast_ref::<soda::Error>().is_some_and(soda::Error::is_validation)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
