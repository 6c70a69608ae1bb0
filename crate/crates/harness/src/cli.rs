//! Command-line front end.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{parse_config, ExperimentConfig};
use crate::experiment::{environment, run_experiment, ExperimentError, RunOptions};
use crate::{dump, summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRIALS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "amap", version, about = "Uncertainty-aware active mapping experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configuration of an experiment and write CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides AMAP_THREADS).
        #[arg(long)]
        threads: Option<usize>,
        /// Also dump truth, reconstruction and path of each first trial.
        #[arg(long)]
        dump: bool,
    },
    /// Mean and 95% CI per configuration on 1 s bins.
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Summary file; defaults to stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the ground-truth field of one environment seed.
    Grf {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// World and kernel settings; the desk defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, i32> {
    match path {
        None => Ok(ExperimentConfig::desk()),
        Some(p) => parse_config(p).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }),
    }
}

/// Execute a parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, trials, seed, out, threads, dump } => {
            let mut cfg = match load(Some(&config)) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
            match run_experiment(&cfg, &RunOptions { threads, dump_first_trial: dump }) {
                Ok(report) => {
                    for c in &report.combinations {
                        println!("{} rows={} failed={}", c.csv.display(), c.rows, c.failed_trials.len());
                    }
                    println!("{}", report.manifest.display());
                    EXIT_OK
                }
                Err(e @ ExperimentError::TooManyFailures { .. }) => {
                    eprintln!("error: {e}");
                    EXIT_TRIALS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_FAILURE
                }
            }
        }
        Command::Summarize { csv, out } => {
            let paths: Vec<&std::path::Path> = csv.iter().map(|p| p.as_path()).collect();
            let rows = match summary::summarize(&paths) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_FAILURE;
                }
            };
            let mut buf = Vec::new();
            summary::write_summary(&rows, &mut buf).expect("in-memory write");
            print!("{}", String::from_utf8_lossy(&buf));
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, &buf) {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_FAILURE;
                }
            }
            EXIT_OK
        }
        Command::Grf { seed, out, config } => {
            let cfg = match load(config.as_ref()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let env = match environment(&cfg, seed) {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match dump::write_field_file(&out, &env.field.grid, env.field.values.as_slice()) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: {}: {e}", out.display());
                    EXIT_FAILURE
                }
            }
        }
    }
}
