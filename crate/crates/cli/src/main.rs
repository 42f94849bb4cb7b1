use anyhow::Context;
use clap::{Parser, ValueEnum};
use ras_cli::config::THREADS_ENV;
use ras_cli::{CliError, Command, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

/// Reach-avoid-stay value functions, training and evaluation.
#[derive(Parser)]
#[command(name = "ras", version)]
struct Args {
    command: Cmd,
    /// Run configuration (TOML).
    config: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Cmd {
    /// Solve the stay value H and its policy.
    SolveH,
    /// Splice H with the target reward (needs h.csv).
    BuildHg,
    /// Solve the reach-avoid-stay value V (needs hg.csv).
    SolveV,
    /// Solve the reach-avoid baseline V_RA.
    SolveRa,
    /// Learn H by sampled Q-learning.
    Qlearn,
    /// Two-stage actor-critic training.
    TrainDdpg,
    /// Roll out each configured policy from the configured start state.
    Simulate,
    /// Monte Carlo success rates from start states sampled in {V > threshold}.
    Evaluate,
    /// Heatmaps with zero-level contours.
    Render,
    /// Set areas and JSON copies of the grids.
    Export,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::SolveH => Command::SolveH,
            Cmd::BuildHg => Command::BuildHg,
            Cmd::SolveV => Command::SolveV,
            Cmd::SolveRa => Command::SolveRa,
            Cmd::Qlearn => Command::Qlearn,
            Cmd::TrainDdpg => Command::TrainDdpg,
            Cmd::Simulate => Command::Simulate,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Render => Command::Render,
            Cmd::Export => Command::Export,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (json, code) = match e.downcast_ref::<CliError>() {
                Some(c) => (c.to_json(), c.exit_code()),
                None => (
                    serde_json::json!({ "error": "internal", "message": format!("{e:#}") }),
                    1,
                ),
            };
            eprintln!("{json}");
            ExitCode::from(code as u8)
        }
    }
}

fn execute(args: &Args) -> anyhow::Result<()> {
    if let Some(n) = std::env::var(THREADS_ENV).ok().filter(|s| !s.is_empty()) {
        let n: usize = n
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let config = RunConfig::load(&args.config)?.with_env_overrides();
    let start = Instant::now();
    let summary = ras_cli::run(args.command.into(), &config)?;
    println!("{} ({:.1} s)", summary.line, start.elapsed().as_secs_f64());
    Ok(())
}
