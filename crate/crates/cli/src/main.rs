use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use olne::experiments::{self, io, MonteCarloConfig, Profile, Scenario};
use olne::inverse::{predict, solve_inverse_baseline, solve_inverse_joint, EstimationMethod, EstimationResult, InverseConfig};
use olne::observation::{observe, ObservationKind, ObservationModel, ObservationSequence};
use olne::{solve_forward, CostParameters, ForwardConfig, Trajectory};

#[derive(Parser)]
#[command(name = "olne", version, about = "Forward and inverse open-loop Nash games")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in scenario as JSON.
    Scenario {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the forward game for a scenario and weights.
    Forward {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Weights JSON; defaults to the scenario's ground truth.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corrupt a trajectory with Gaussian observation noise.
    Observe {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Trajectory or forward-solution JSON.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value = "full")]
        obs_kind: ObservationKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate cost weights from observations.
    Inverse {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value = "joint")]
        method: EstimationMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward-solve the game at an estimate's weights.
    Predict {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep and write the result table as CSV.
    Montecarlo(MonteCarloArgs),
    /// Rolling median and IQR of a result table.
    Summarize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = experiments::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArg {
    /// Built-in scenario id or path to a scenario JSON file.
    #[arg(long, default_value = experiments::TWO_PLAYER_CROSSING)]
    scenario: String,
}

#[derive(Args)]
struct MonteCarloArgs {
    /// Sweep configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    scenario: Option<String>,
    /// Noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Seeds per noise level.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    obs_kind: Option<Vec<ObservationKind>>,
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<EstimationMethod>>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fill the wall-clock columns (the table is then no longer reproducible).
    #[arg(long)]
    runtimes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    let scenario: Scenario = if path.is_file() {
        io::read_json(path).with_context(|| format!("reading scenario {}", path.display()))?
    } else {
        experiments::build_scenario(arg)?
    };
    scenario.validate().context("invalid scenario")?;
    Ok(scenario)
}

/// Accepts a bare trajectory or any document with a `trajectory` field.
fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let value: serde_json::Value = io::read_json(path).with_context(|| format!("reading {}", path.display()))?;
    let inner = match value.get("trajectory") {
        Some(t) => t.clone(),
        None => value,
    };
    serde_json::from_value(inner).with_context(|| format!("{} does not hold a trajectory", path.display()))
}

fn emit<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}

fn montecarlo(args: MonteCarloArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => io::read_json::<MonteCarloConfig>(p).with_context(|| format!("reading {}", p.display()))?,
        None => MonteCarloConfig::from_profile(
            args.profile,
            args.scenario.as_deref().unwrap_or(experiments::TWO_PLAYER_CROSSING),
        ),
    };
    if let Some(s) = args.scenario {
        config.scenario = s;
    }
    if let Some(s) = args.sigma {
        config.sigmas = s;
    }
    if let Some(n) = args.seeds {
        config.seeds = n;
    }
    if let Some(k) = args.obs_kind {
        config.kinds = k;
    }
    if let Some(m) = args.method {
        config.methods = m;
    }
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    config.record_runtimes |= args.runtimes;
    if args.out.is_some() {
        config.output = args.out;
    }
    config.validate()?;
    let Some(out) = config.output.clone() else {
        bail!("montecarlo needs an output path (--out or `output` in the config)");
    };
    let rows = experiments::run_monte_carlo(&config)?;
    let failed = rows.iter().filter(|r| r.failed).count();
    eprintln!("{} rows written to {} ({failed} failed)", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scenario { scenario, out } => emit(out.as_deref(), &experiments::build_scenario(&scenario)?),
        Command::Forward { scenario, theta, out } => {
            let s = load_scenario(&scenario.scenario)?;
            let theta = match theta {
                Some(p) => io::read_json::<CostParameters>(&p).with_context(|| format!("reading {}", p.display()))?,
                None => s.theta_true.clone(),
            };
            let sol = solve_forward(&s.game, &theta, &ForwardConfig::default(), None)?;
            if !sol.converged() {
                log::warn!("forward solve ended {:?} with |G| = {:.3e}", sol.status, sol.residual_norm);
            }
            emit(out.as_deref(), &sol)
        }
        Command::Observe {
            scenario,
            trajectory,
            sigma,
            obs_kind,
            seed,
            out,
        } => {
            let s = load_scenario(&scenario.scenario)?;
            let traj = load_trajectory(&trajectory)?;
            let obs = observe(&s.game, &traj, &ObservationModel::new(obs_kind, sigma)?, seed)?;
            emit(out.as_deref(), &obs)
        }
        Command::Inverse {
            scenario,
            observations,
            method,
            out,
        } => {
            let s = load_scenario(&scenario.scenario)?;
            let obs: ObservationSequence =
                io::read_json(&observations).with_context(|| format!("reading {}", observations.display()))?;
            let config = InverseConfig::default();
            let est = match method {
                EstimationMethod::Joint => solve_inverse_joint(&s.game, &obs, &config)?,
                EstimationMethod::Baseline => solve_inverse_baseline(&s.game, &obs, &config)?,
            };
            emit(out.as_deref(), &est)
        }
        Command::Predict { scenario, estimate, out } => {
            let s = load_scenario(&scenario.scenario)?;
            let est: EstimationResult =
                io::read_json(&estimate).with_context(|| format!("reading {}", estimate.display()))?;
            let sol = predict(&s.game, &est.theta, &ForwardConfig::default(), Some(&est.trajectory))?;
            if !sol.converged() {
                log::warn!("prediction is ill-conditioned (|G| = {:.3e})", sol.residual_norm);
            }
            emit(out.as_deref(), &sol)
        }
        Command::Montecarlo(args) => montecarlo(args),
        Command::Summarize { input, window, out } => {
            let rows = io::read_rows_file(&input).with_context(|| format!("reading {}", input.display()))?;
            if rows.is_empty() {
                bail!("{} has no rows", input.display());
            }
            let summary = experiments::summarize(&rows, window);
            match out {
                Some(p) => io::write_summary(std::fs::File::create(&p)?, &summary)?,
                None => io::write_summary(std::io::stdout().lock(), &summary)?,
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
