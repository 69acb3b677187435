//! `gi` — train and evaluate the group-identification model.
//!
//! Exit codes: 0 success, 1 validation error (bad config, bad input files,
//! bad usage), 2 runtime failure (divergence, IO during a run, failed
//! verification).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gi_cli::commands::{
    cmd_ablate, cmd_eval, cmd_prepare, cmd_selfcheck, cmd_sweep, cmd_synth, cmd_train, SweepParam,
};
use gi_cli::config::load_run_config;
use gi_core::data::SyntheticSpec;
use gi_core::eval::Split;
use gi_core::Error;

#[derive(Parser)]
#[command(name = "gi", version, about = "Group identification: dual-level interest model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split raw edge lists and write a dataset manifest.
    Prepare {
        /// User-item edge list ("user item" per line).
        #[arg(long)]
        user_item: PathBuf,
        /// Group-item edge list.
        #[arg(long)]
        group_item: PathBuf,
        /// User-group edge list.
        #[arg(long)]
        user_group: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap each user to at most this many training memberships.
        #[arg(long)]
        coldstart_k: Option<usize>,
        #[arg(long, default_value = "prepared")]
        out: PathBuf,
    },
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Dotted-path config overrides, e.g. --set loss.tau=0.5
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Evaluate an existing checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated cutoffs, e.g. 10,20.
        #[arg(long)]
        ks: Option<String>,
    },
    /// Run the full model and ablation variants A-I on a shared split.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Sensitivity sweep over gamma, E or lambda1.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// gamma, E or lambda1.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.5,0.75,1,1.25,1.5
        #[arg(long)]
        values: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Generate a planted-topic synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 40)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        topics: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
    /// Verify gradients, operators, metrics and loss identities.
    Selfcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn run(cli: Cli) -> gi_core::Result<bool> {
    match cli.command {
        Command::Prepare {
            user_item,
            group_item,
            user_group,
            seed,
            coldstart_k,
            out,
        } => {
            cmd_prepare(&user_item, &group_item, &user_group, seed, coldstart_k, &out)?;
            Ok(true)
        }
        Command::Train {
            config,
            seed,
            out,
            set,
        } => {
            let cfg = load_run_config(&config, &set, seed)?;
            cmd_train(&cfg, &out)?;
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            split,
            ks,
        } => {
            let split: Split = split.parse()?;
            let ks = match ks {
                Some(raw) => Some(
                    raw.split(',')
                        .map(|t| {
                            t.trim().parse::<usize>().map_err(|_| {
                                Error::Usage(format!("bad cutoff {t:?} in --ks"))
                            })
                        })
                        .collect::<gi_core::Result<Vec<usize>>>()?,
                ),
                None => None,
            };
            cmd_eval(&checkpoint, split, ks)?;
            Ok(true)
        }
        Command::Ablate {
            config,
            seed,
            out,
            set,
        } => {
            let cfg = load_run_config(&config, &set, seed)?;
            cmd_ablate(&cfg, &out)?;
            Ok(true)
        }
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
            set,
        } => {
            let cfg = load_run_config(&config, &set, seed)?;
            let param: SweepParam = param.parse()?;
            let values = values
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Usage(format!("bad value {t:?} in --values")))
                })
                .collect::<gi_core::Result<Vec<f64>>>()?;
            cmd_sweep(&cfg, param, &values, &out)?;
            Ok(true)
        }
        Command::Synth {
            users,
            items,
            groups,
            topics,
            density,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                n_users: users,
                n_items: items,
                n_groups: groups,
                n_topics: topics,
                density,
                seed,
            };
            cmd_synth(&spec, &out)?;
            Ok(true)
        }
        Command::Selfcheck { seed } => Ok(cmd_selfcheck(seed)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
