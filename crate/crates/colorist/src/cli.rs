use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use colorist_core::service::ServiceDefaults;
use colorist_core::session::{replay_log, SessionLog, DEFAULT_DWELL_MS, DEFAULT_EPSILON, DEFAULT_ITERATIONS};
use colorist_core::sim::{run_experiment, write_experiment, ExperimentSpec, PolicyKind, PolicySpec};
use colorist_core::{Calibration, Mode, RewardScheme, SessionConfig};

#[derive(Debug, Parser)]
#[command(name = "colorist", version, about = "Adaptive drawing canvas: simulator and live server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run simulated-user sessions and write logs, grid dumps and metrics.
    Simulate(SimulateArgs),
    /// Host live drawing sessions over WebSocket.
    Serve(ServeArgs),
    /// Verify a session log by replaying it.
    Replay(ReplayArgs),
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "adaptive")]
    pub mode: Mode,
    /// hue:<arm>[:<tolerance>], brightest, contrast or random
    #[arg(long, default_value = "hue:7")]
    pub policy: PolicyKind,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: u32,
    #[arg(long, default_value_t = 20)]
    pub reps: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the simulated user; defaults to `--seed`.
    #[arg(long)]
    pub user_seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value = "cone")]
    pub reward_scheme: RewardScheme,
    #[arg(long)]
    pub stay_probability: Option<f64>,
    /// Skip the random-mode control runs.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = DEFAULT_DWELL_MS)]
    pub dwell_ms: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Stored calibration file reused by every session.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    /// Grid dump to compare against the replayed canvas.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Serve(args) => serve(args),
        Command::Replay(args) => replay(args),
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let config = SessionConfig {
        mode: args.mode,
        seed: args.seed,
        iterations: args.iterations,
        epsilon: args.epsilon,
        reward_scheme: args.reward_scheme,
        ..SessionConfig::default()
    };
    let mut policy = PolicySpec::new(args.policy, args.user_seed.unwrap_or(args.seed));
    if let Some(p) = args.stay_probability {
        if !(0.0..=1.0).contains(&p) {
            bail!("stay probability {p} is not a probability");
        }
        policy.stay_probability = p;
    }
    let mut spec = ExperimentSpec::new(config, policy, args.reps);
    spec.metrics.compare_random = !args.no_baseline;

    let result = run_experiment(&spec)?;
    write_experiment(&result, &args.out)
        .with_context(|| format!("writing results to {}", args.out.display()))?;

    let r = &result.report;
    println!(
        "{} sessions, policy {}, mode {:?}",
        r.sessions.len(),
        r.policy,
        r.mode
    );
    println!(
        "modal color-group share: {:.3} overall, {:.3} in trailing window",
        r.mean_proposal_share, r.mean_window_share
    );
    if let (Some(random), Some(delta)) = (r.random_window_share, r.random_delta) {
        println!("random-mode window share {random:.3}, delta {delta:+.3}");
    }
    println!("uniform baseline {:.3}", r.uniform_baseline);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&args.epsilon) {
        bail!("epsilon {} is not a probability", args.epsilon);
    }
    let calibration = args
        .calibration
        .map(|path| -> anyhow::Result<Calibration> {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(text.parse()?)
        })
        .transpose()?;
    let defaults = ServiceDefaults {
        dwell_ms: args.dwell_ms,
        epsilon: args.epsilon,
        calibration,
        ..ServiceDefaults::default()
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::server::serve(args.port, defaults))
}

fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    let log = SessionLog::parse(&text)?;
    let session = replay_log(&log.config, &log)?;
    if let Some(grid) = args.grid {
        let expected = fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
        if expected != session.export_csv() {
            bail!("grid dump {} differs from the replayed canvas", grid.display());
        }
    }
    println!(
        "ok: {} steps replayed, {} panels painted",
        session.steps_done(),
        session.canvas().painted_count()
    );
    Ok(())
}
