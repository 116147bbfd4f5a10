//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 config or IO failure,
//! 3 invariant violation (conservation, bundle mismatch, scale bounds).

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use super::{
    compare, report, run_to_dir, scaler_encoding, train_ac_to_dir, train_scaler_to_dir,
    ExperimentConfig, HarnessError, RunSpec, Scheme,
};
use crate::admission::{extract_admission_limit, AcConfig, AcTable, AC_TABLE_ENCODING};
use crate::rl_core::{ExplorationParams, LearningParams};
use crate::scaler::ScalerTable;

#[derive(Parser)]
#[command(
    name = "sqlr",
    version,
    about = "Elastic cloud provisioning with short-term-memory Q-learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train the admission agent; writes ac_table.json and ac_policy.json.
    TrainAc {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Admission decisions to train on (default from config).
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Pre-train a scaling table; writes scaler_table.json.
    TrainScaler {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Scheme whose reward weighting to train for (sqlr, sqlr-case1,
        /// sqlr-case2).
        #[arg(long)]
        scheme: Option<String>,
        /// Passes over the pre-training workload (default from config).
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Run one scheme over the workload; writes CSVs, bundle and plots.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Train, pre-train, and run every comparison scheme on one workload.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a run directory's bundle against its CSVs; re-emit plots.
    Report {
        /// Directory written by a previous run.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Admission threshold for a run: extracted from the trained table when one
/// is configured, the static config value otherwise.
fn resolve_x_lim(config: &ExperimentConfig) -> Result<u32, HarnessError> {
    match &config.ac_table {
        Some(path) => {
            let table = AcTable::load(path, AC_TABLE_ENCODING)?;
            let ac_cfg = AcConfig::new(
                config.x_tgt,
                config.x_bnd,
                ExplorationParams {
                    m_visits: config.ac.m_visits,
                    eps_min: config.ac.eps_min,
                },
                LearningParams {
                    gamma: config.ac.gamma,
                },
            )
            .map_err(|e| HarnessError::Config(e.to_string()))?;
            extract_admission_limit(&table, &ac_cfg)
                .map_err(|e| HarnessError::Invariant(e.to_string()))
        }
        None => Ok(config.x_lim),
    }
}

fn dispatch(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::TrainAc {
            config,
            seed,
            out,
            episodes,
        } => {
            let config = load_config(&config)?;
            let seed = config.resolve_seed(seed)?;
            let episodes = episodes.unwrap_or(config.ac.episodes);
            let outcome = train_ac_to_dir(&config, seed, episodes, &out)?;
            println!(
                "trained admission agent: {} episodes, x_lim {}%, {}/{} states converged",
                outcome.episodes, outcome.x_lim, outcome.converged_states, outcome.visited_states
            );
        }
        Command::TrainScaler {
            config,
            seed,
            out,
            scheme,
            episodes,
        } => {
            let config = load_config(&config)?;
            let seed = config.resolve_seed(seed)?;
            let scheme = Scheme::parse(scheme.as_deref().unwrap_or("sqlr"), &config)?;
            if !matches!(scheme, Scheme::Sqlr | Scheme::SqlrCase1 | Scheme::SqlrCase2) {
                return Err(HarnessError::Config(format!(
                    "scheme {} has no scaling table to train",
                    scheme.label()
                )));
            }
            let x_lim = resolve_x_lim(&config)?;
            let passes = episodes.unwrap_or(config.scaler.pretrain_passes);
            let outcome = train_scaler_to_dir(&config, seed, scheme, x_lim, passes, &out)?;
            println!(
                "pre-trained scaler ({}): {} passes, {} epochs, convergence {:.3}",
                scheme.label(),
                outcome.passes,
                outcome.epochs,
                outcome.convergence_fraction
            );
        }
        Command::Run {
            config,
            seed,
            out,
            scheme,
        } => {
            let config = load_config(&config)?;
            let seed = config.resolve_seed(seed)?;
            let name = scheme.or_else(|| config.scheme.clone()).ok_or_else(|| {
                HarnessError::Config("scheme required (--scheme or config)".into())
            })?;
            let scheme = Scheme::parse(&name, &config)?;
            let x_lim = resolve_x_lim(&config)?;
            let scaler_table = match &config.scaler_table {
                Some(path) => Some(ScalerTable::load(path, &scaler_encoding(x_lim))?),
                None => None,
            };
            let profile = config.load_run_profile()?;
            let artifacts = run_to_dir(
                RunSpec {
                    config: &config,
                    seed,
                    scheme,
                    profile,
                    x_lim,
                    scaler_table,
                },
                &out,
            )?;
            let b = &artifacts.bundle;
            println!(
                "{}: {} arrived, blocking {:.4}, {:.3} VM-hours, mean K {:.2}",
                b.scheme, b.arrived, b.overall_blocking, b.vm_hours, b.mean_k
            );
        }
        Command::Compare { config, seed, out } => {
            let config = load_config(&config)?;
            let seed = config.resolve_seed(seed)?;
            let summary = compare(&config, seed, &out)?;
            println!("admission threshold x_lim = {}%", summary.x_lim);
            println!(
                "{:<12} {:>8} {:>8} {:>10} {:>10} {:>8}",
                "scheme", "arrived", "blocked", "blocking", "VM-hours", "mean K"
            );
            for s in &summary.schemes {
                println!(
                    "{:<12} {:>8} {:>8} {:>10.4} {:>10.3} {:>8.2}",
                    s.scheme, s.arrived, s.blocked, s.overall_blocking, s.vm_hours, s.mean_k
                );
            }
        }
        Command::Report { out } => {
            let bundle = report(&out)?;
            println!(
                "verified {}: bundle matches CSVs ({} requests, blocking {:.4})",
                out.display(),
                bundle.arrived,
                bundle.overall_blocking
            );
        }
    }
    Ok(())
}

/// Parses arguments and runs; returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
