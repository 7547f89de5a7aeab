//! `ojadiff`: experiment runner for Oja's iteration and its diffusion limits.

mod commands;
mod config;
mod manifest;
mod schema;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Outcome};
use config::ConfigError;
use manifest::{content_hash, write_atomic, RunManifest};

#[derive(Parser)]
#[command(name = "ojadiff", version, about = "Oja's streaming PCA iteration and its ODE / OU diffusion limits")]
#[command(after_help = schema::COMMON)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file for the subcommand
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, env = "OJA_DIFFUSION_OUT", default_value = "./out")]
    out: PathBuf,
    /// Master seed, overriding the one in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles (default: all cores)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Also write a gnuplot script that plots the CSV output
    #[arg(long)]
    gnuplot_stub: bool,
}

fn help(text: &str) -> String {
    format!("{text}\n\n{}", schema::COMMON)
}

#[derive(Subcommand)]
enum Command {
    /// Run one Oja chain and write its trajectory
    #[command(after_help = help(schema::RUN))]
    Run(Common),
    /// Evaluate the closed-form ODE limit on a time grid
    #[command(after_help = help(schema::ODE))]
    Ode(Common),
    /// Simulate the Ornstein-Uhlenbeck limit near a stationary point
    #[command(after_help = help(schema::SDE))]
    Sde(Common),
    /// Predict (and optionally measure) the three crossing times
    #[command(after_help = help(schema::PHASES))]
    Phases(Common),
    /// Run a Monte Carlo ensemble experiment
    #[command(after_help = help(schema::MC))]
    Mc(Common),
    /// Evaluate the finite-sample rate formulas
    #[command(after_help = help(schema::RATES))]
    Rates(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Run(c) => ("run", c),
            Command::Ode(c) => ("ode", c),
            Command::Sde(c) => ("sde", c),
            Command::Phases(c) => ("phases", c),
            Command::Mc(c) => ("mc", c),
            Command::Rates(c) => ("rates", c),
        }
    }
}

fn execute(name: &str, text: &str, common: &Common) -> Result<Outcome, Failure> {
    let workers = common.workers.map(|w| w as usize);
    match name {
        "run" => commands::run(text, common.seed),
        "ode" => commands::ode(text, common.seed),
        "sde" => commands::sde(text, common.seed),
        "phases" => commands::phases(text, common.seed, workers),
        "mc" => commands::mc(text, common.seed, workers),
        "rates" => commands::rates(text, common.seed),
        _ => unreachable!("clap only yields known subcommands"),
    }
}

fn write_results(name: &str, common: &Common, hash: String, outcome: Outcome, started: Instant) -> anyhow::Result<Vec<PathBuf>> {
    let dir: &Path = &common.out;
    fs::create_dir_all(dir)?;
    let mut outputs: Vec<String> = outcome.outputs.iter().map(|o| o.name.clone()).collect();
    let stub = (common.gnuplot_stub && !outcome.plot.is_empty()).then(|| format!("{name}.gp"));
    outputs.extend(stub.clone());
    let mut manifest = RunManifest {
        command: name.to_string(),
        config_path: common.config.display().to_string(),
        config_hash: hash,
        master_seed: outcome.master_seed,
        output_dir: dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        workers: common.workers.map(|w| w as usize),
        config: outcome.config,
        outputs,
        status: "writing".into(),
        wall_time_s: None,
    };
    let mut written = vec![manifest.write(dir)?];
    for o in &outcome.outputs {
        written.push(write_atomic(dir, &o.name, &o.bytes)?);
    }
    if let Some(stub) = stub {
        written.push(write_atomic(dir, &stub, outcome.plot.as_bytes())?);
    }
    manifest.status = "complete".into();
    manifest.wall_time_s = Some(started.elapsed().as_secs_f64());
    manifest.write(dir)?;
    Ok(written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.parts();
    let started = Instant::now();
    let text = match fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            let err = ConfigError::new("config", format!("cannot read {}: {e}", common.config.display()));
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    let outcome = match execute(name, &text, common) {
        Ok(o) => o,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let report = outcome.report.clone();
    match write_results(name, common, content_hash(text.as_bytes()), outcome, started) {
        Ok(paths) => {
            println!("{report}");
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
