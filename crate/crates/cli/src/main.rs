//! `ritzlab`: construction checks, training runs, error decompositions,
//! convergence studies and bound evaluation. Every subcommand prints a JSON
//! report on stdout and exits nonzero when a check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ritz_core::bounds::{evaluate_bounds, BoundInputs};
use ritz_core::harness::{
    run_construction_suite, run_convergence_study, run_error_decomposition, run_training, verify_gradient_norm_network,
    write_json, write_study_outputs, DecompositionConfig, StudyConfig, TrainRunConfig,
};
use ritz_core::{Error, Network};

#[derive(Parser)]
#[command(name = "ritzlab", version, about = "Deep Ritz method laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact-construction verification suite.
    ConstructVerify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the gradient-norm network built from a saved ReLU² network.
    VerifyGradnet {
        netfile: PathBuf,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one network from a TOML config.
    Train { config: PathBuf },
    /// Run a convergence-rate study from a TOML config.
    Study { config: PathBuf },
    /// Estimate the approximation/statistical/optimization error split.
    Decompose { config: PathBuf },
    /// Evaluate every bound at the inputs given in a TOML file.
    Bounds { inputs: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::ConstructVerify { seed } => {
            let report = run_construction_suite(seed)?;
            print_json(&report)?;
            Ok(status(report.passed))
        }
        Command::VerifyGradnet { netfile, probes, seed } => {
            let net = Network::load(&netfile).with_context(|| format!("loading {}", netfile.display()))?;
            let check = verify_gradient_norm_network(&net, probes, seed)?;
            print_json(&check)?;
            Ok(status(check.passed))
        }
        Command::Train { config } => {
            let cfg = TrainRunConfig::from_toml(&read(&config)?)?;
            let (net, history, report) = run_training(&cfg)?;
            if let Some(dir) = &cfg.output {
                fs::create_dir_all(dir)?;
                net.save(dir.join("network.json"))?;
                history.write_csv(dir.join("history.csv"))?;
                write_json(&report, dir.join("report.json"))?;
            }
            print_json(&report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Study { config } => {
            let cfg = StudyConfig::from_toml(&read(&config)?)?;
            match run_convergence_study(&cfg) {
                Ok(report) => {
                    if let Some(dir) = &cfg.output {
                        write_study_outputs(&report, dir)?;
                    }
                    print_json(&report)?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(Error::StudyAborted { partial, source }) => {
                    if let Some(dir) = &cfg.output {
                        write_study_outputs(&partial, dir)?;
                    }
                    print_json(&partial)?;
                    eprintln!("study aborted: {source}");
                    Ok(ExitCode::FAILURE)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Decompose { config } => {
            let cfg = DecompositionConfig::from_toml(&read(&config)?)?;
            let report = run_error_decomposition(&cfg)?;
            if let Some(dir) = &cfg.output {
                write_json(&report, dir.join("decomposition.json"))?;
            }
            // the right-hand side is built from proxies, so a violation is
            // reported in the JSON rather than treated as a failure
            print_json(&report)?;
            if !report.all_bounds_hold {
                eprintln!("warning: decomposition inequality violated for at least one seed");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { inputs } => {
            let inputs = BoundInputs::from_toml(&read(&inputs)?)?;
            print_json(&evaluate_bounds(&inputs)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
