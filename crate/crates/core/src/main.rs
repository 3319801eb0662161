use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ppdiv::control::Policy;
use ppdiv::divergence::{csd_poisson_gm, csd_poisson_quadrature, Grid, PoissonModel};
use ppdiv::gaussmix::HyperVolumeUnit;
use ppdiv::harness::{
    config_hash, load_config, run_montecarlo, run_simulation, validate_oracles, write_run_csv, write_sidecar,
    write_summary_csv, ValidationLevel, STEADY_STATE_FROM,
};
use ppdiv::pointprocess::mc_csd;
use ppdiv::rng::{purpose, RngStream};
use ppdiv::scenario::ScenarioConfig;
use ppdiv::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ppdiv",
    version,
    about = "Poisson point-process divergences and divergence-driven sensor control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Closed,
    Quadrature,
    Montecarlo,
}

#[derive(Subcommand)]
enum Command {
    /// Cauchy-Schwarz divergence between two Poisson models (JSON or TOML files).
    Divergence {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Hyper-volume unit; overrides the value stored in the files.
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, value_enum, default_value = "closed")]
        method: Method,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// One seeded run; writes the per-step CSV.
    Simulate {
        /// Scenario TOML; defaults apply to every field it omits.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        policy: Option<Policy>,
    },
    /// A batch of seeded runs; writes per-step OSPA mean and spread.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        policy: Option<Policy>,
    },
    /// Runs the numerical oracles and prints a JSON report.
    Validate {
        #[arg(long, value_enum, default_value = "fast")]
        level: ValidationLevel,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_model(path: &Path) -> Result<PoissonModel> {
    let text = std::fs::read_to_string(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|reason| Error::Config {
        path: path.display().to_string(),
        reason,
    })
}

fn scenario_config(path: &Option<PathBuf>, policy: Option<Policy>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(p) = policy {
        cfg.policy = p;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn divergence(
    a: &Path,
    b: &Path,
    k: Option<f64>,
    method: Method,
    samples: usize,
    seed: u64,
) -> Result<serde_json::Value> {
    let (mut a, mut b) = (read_model(a)?, read_model(b)?);
    if let Some(k) = k {
        let unit = HyperVolumeUnit::new(k)?;
        a.unit = unit;
        b.unit = unit;
    }
    Ok(match method {
        Method::Closed => json!({ "method": "closed", "value": csd_poisson_gm(&a, &b)? }),
        Method::Quadrature => {
            let cells = match a.dim() {
                1 => 4000,
                2 => 400,
                3 => 80,
                d => {
                    return Err(Error::InvalidParameter {
                        name: "method",
                        reason: format!("quadrature supports d <= 3, got {d}"),
                    })
                }
            };
            let grid = Grid::covering(&[&a.intensity, &b.intensity], 9.0, cells)?;
            let value = csd_poisson_quadrature(
                &grid.sample(&a.intensity)?,
                &grid.sample(&b.intensity)?,
                grid.cell_volume(),
                a.unit,
            )?;
            json!({ "method": "quadrature", "value": value, "cells": grid.len() })
        }
        Method::Montecarlo => {
            let est = mc_csd(&mut RngStream::new(seed, purpose::ORACLE), &a, &b, samples)?;
            json!({ "method": "montecarlo", "value": est.estimate, "std_error": est.std_error, "samples": samples, "seed": seed })
        }
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Divergence {
            a,
            b,
            k,
            method,
            samples,
            seed,
        } => {
            println!("{}", divergence(&a, &b, k, method, samples, seed)?);
        }
        Command::Simulate {
            config,
            seed,
            out,
            policy,
        } => {
            let cfg = scenario_config(&config, policy)?;
            let scn = cfg.build()?;
            let record = run_simulation(&scn, seed)?;
            write_run_csv(create(&out)?, &record)?;
            write_sidecar(
                &out,
                &json!({
                    "command": "simulate",
                    "version": env!("CARGO_PKG_VERSION"),
                    "config_sha256": config_hash(&cfg)?,
                    "config_file": config.map(|p| p.display().to_string()),
                    "policy": cfg.policy,
                    "seed": seed,
                    "horizon": cfg.horizon,
                }),
            )?;
            eprintln!(
                "mean OSPA {:.3} m over {} steps -> {}",
                record.mean_ospa_from(1),
                record.steps.len(),
                out.display()
            );
        }
        Command::Montecarlo {
            config,
            runs,
            seed,
            jobs,
            out,
            policy,
        } => {
            let cfg = scenario_config(&config, policy)?;
            let scn = cfg.build()?;
            let summary = run_montecarlo(&scn, runs, seed, jobs)?;
            write_summary_csv(create(&out)?, &summary)?;
            write_sidecar(
                &out,
                &json!({
                    "command": "montecarlo",
                    "version": env!("CARGO_PKG_VERSION"),
                    "config_sha256": config_hash(&cfg)?,
                    "config_file": config.map(|p| p.display().to_string()),
                    "policy": cfg.policy,
                    "master_seed": seed,
                    "runs": runs,
                    "seed_rule": "run i uses splitmix64(master ^ splitmix64(i))",
                    "steady_state_mean_ospa": summary.steady_state_mean(STEADY_STATE_FROM),
                    "wall_clock_secs": summary.wall_clock_secs,
                }),
            )?;
            eprintln!(
                "steady-state mean OSPA {:.3} m ({} runs, {:.1} s) -> {}",
                summary.steady_state_mean(STEADY_STATE_FROM),
                runs,
                summary.wall_clock_secs,
                out.display()
            );
        }
        Command::Validate { level, out } => {
            let report = validate_oracles(level)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            for e in report.entries.iter().filter(|e| !e.passed) {
                eprintln!(
                    "FAIL {}: {} {:.3e} >= {:.3e}",
                    e.name, e.measure, e.measured, e.tolerance
                );
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
