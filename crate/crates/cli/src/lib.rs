//! `mvfd` command line: generate the synthetic benchmark, train, evaluate,
//! run the ablation table and report inference cost.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{ExperimentConfig, OUT_DIR_ENV};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "mvfd", version, about = "Two-view distress classifier: data, training, evaluation and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Also settable through MVFD_OUT_DIR.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Print the result as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Dataset seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write checkpoint, history and gate log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split, init, shuffle and augmentation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// A, B, C, D or full.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Score a checkpoint on the test split it was trained against.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every ablation case over eval.n_runs seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report MAC counts and inference time.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.eval.out_dir.clone())
}

fn report<T: Serialize>(json: bool, value: &T, text: impl FnOnce(&T) -> String) -> String {
    if json {
        serde_json::to_string_pretty(value).expect("report serialises")
    } else {
        text(value)
    }
}

/// Runs one command and returns what it prints on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenData { common, seed } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.dataset.seed = s;
            }
            cfg.validate()?;
            let out = common.out.clone().unwrap_or_else(|| cfg.eval.data_dir.clone());
            let s = commands::gen_data(&cfg, &out)?;
            Ok(report(common.json, &s, |s| {
                format!("wrote {} samples {:?} to {} (config {})", s.n_samples, s.counts, s.dir.display(), &s.config_hash[..12])
            }))
        }
        Command::Train { common, data, seed, ablation } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(a) = ablation {
                cfg.train.ablation = commands::parse_case(&a)?.flags();
            }
            cfg.validate()?;
            let data = data.unwrap_or_else(|| cfg.eval.data_dir.clone());
            let s = commands::train(&cfg, &data, &out_dir(&common, &cfg))?;
            Ok(report(common.json, &s, |s| {
                let v = &s.final_validation;
                format!(
                    "epoch {}: validation loss {:.4} accuracy {:.2}% | best {:.2}% at epoch {} | {} freeze events | {}",
                    v.epoch,
                    v.total,
                    v.accuracy,
                    s.best_val_accuracy,
                    s.best_epoch,
                    s.freeze_events,
                    s.out_dir.display()
                )
            }))
        }
        Command::Eval { common, checkpoint, data } => {
            let cfg = load(&common)?;
            let data = data.unwrap_or_else(|| cfg.eval.data_dir.clone());
            let r = commands::eval(&checkpoint, &data, common.out.as_deref())?;
            Ok(report(common.json, &r, |r| {
                format!(
                    "test accuracy {:.2}% macro recall {:.4} macro F1 {:.4} over {} samples",
                    r.accuracy, r.macro_recall, r.macro_f1, r.n_samples
                )
            }))
        }
        Command::Ablate { common, seed } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let rows = commands::ablation(&cfg, &out_dir(&common, &cfg))?;
            Ok(report(common.json, &rows, |rows| {
                let mut s = String::from(mvfd::eval::AblationRow::CSV_HEADER);
                for r in rows {
                    s.push('\n');
                    s.push_str(&r.to_csv());
                }
                s
            }))
        }
        Command::Bench { common } => {
            let cfg = load(&common)?;
            cfg.validate()?;
            let rows = commands::bench(&cfg, &out_dir(&common, &cfg))?;
            Ok(report(common.json, &rows, |rows| {
                let mut s = String::from(commands::BenchRow::CSV_HEADER);
                for r in rows {
                    s.push('\n');
                    s.push_str(&r.to_csv());
                }
                s
            }))
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("mvfd: {e}");
            e.exit_code()
        }
    }
}

