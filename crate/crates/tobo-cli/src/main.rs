//! `tobo` — benchmark runner for tensor-output Bayesian optimization.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tobo_cli::config::{ExperimentConfig, SuperarmModeConfig};
use tobo_cli::{oracle_cmd, runner, summary};

#[derive(Parser)]
#[command(name = "tobo", version, about = "Tensor-output Bayesian optimization benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Parse and validate a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate the record and result files of a run directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Brute-force reference computations.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the super-arm search mode (cbbo runs).
    #[arg(long, value_parser = parse_superarm_mode)]
    superarm_mode: Option<SuperarmModeConfig>,
}

fn parse_superarm_mode(s: &str) -> Result<SuperarmModeConfig, String> {
    match s {
        "greedy" => Ok(SuperarmModeConfig::Greedy),
        "exact" => Ok(SuperarmModeConfig::Exact),
        other => Err(format!("unknown mode {other:?}; use greedy or exact")),
    }
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Compare the exact posteriors against dense joint-Gaussian
    /// conditioning on random instances.
    Conditioning {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ground-truth optimum of the configured problem.
    Optimum {
        #[arg(long)]
        config: PathBuf,
        /// Run seed whose problem instance is solved.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Best super-arm of the noiseless objective at a fixed input.
    Superarm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated input coordinates, e.g. "0.2,0.7".
        #[arg(long)]
        input: String,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.resolve()?;
            println!("ok: {} is a valid configuration", config.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let mut resolved = cfg.resolve()?;
            if let Some(mode) = args.superarm_mode {
                resolved.loop_config.superarm_mode = Some(mode);
            }
            let out_dir = runner::resolve_output_dir(&resolved, args.output_dir.as_deref())?;
            let status = runner::run_experiment(&resolved, &out_dir)?;
            for seed in &status.completed {
                println!("seed {seed}: ok");
            }
            for (seed, err) in &status.failed {
                eprintln!("seed {seed}: FAILED ({err})");
            }
            println!("artifacts: {}", out_dir.display());
            Ok(if status.all_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Summarize { dir } => {
            // Surrogate runs have no record files; fall back accordingly.
            let has_records = std::fs::read_dir(&dir)
                .with_context(|| format!("cannot list {}", dir.display()))?
                .filter_map(|e| e.ok())
                .any(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    name.starts_with("records_seed") && name.ends_with(".csv")
                });
            let summary = if has_records {
                summary::summarize_dir(&dir)?
            } else {
                summary::summarize_surrogate_dir(&dir)?
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(cmd) => {
            match cmd {
                OracleCommand::Conditioning { trials, seed } => {
                    let report = oracle_cmd::conditioning_check(trials, seed)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    if !report.pass {
                        return Ok(ExitCode::FAILURE);
                    }
                }
                OracleCommand::Optimum { config, seed } => {
                    let cfg = ExperimentConfig::load(&config)?;
                    let report = oracle_cmd::optimum(&cfg, seed)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                }
                OracleCommand::Superarm {
                    config,
                    seed,
                    input,
                } => {
                    let cfg = ExperimentConfig::load(&config)?;
                    let x: Vec<f64> = input
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<f64>()
                                .with_context(|| format!("bad input coordinate {s:?}"))
                        })
                        .collect::<anyhow::Result<_>>()?;
                    let report = oracle_cmd::superarm_at(&cfg, seed, &x)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
