//! Monte Carlo study: demonstrations, corrupted observations, estimates and
//! scored predictions over a grid of noise levels and seeds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{cosine_error, position_error};
use super::scenarios::{build_scenario, Scenario};
use crate::error::{GameError, Result};
use crate::forward::{solve_forward, ForwardConfig, ForwardSolution};
use crate::inverse::{
    predict, solve_inverse_baseline, solve_inverse_joint, EstimationMethod, EstimationResult, EstimationStatus,
    FailureKind, InverseConfig,
};
use crate::observation::{observe, ObservationKind, ObservationModel};

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 10 seeds × 5 noise levels.
    Desk,
    /// 40 seeds × 22 noise levels.
    Full,
}

impl FromStr for Profile {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            other => Err(GameError::Config(format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub scenario: String,
    pub seeds: usize,
    /// Nonnegative, strictly ascending.
    pub sigmas: Vec<f64>,
    pub kinds: Vec<ObservationKind>,
    pub methods: Vec<EstimationMethod>,
    pub master_seed: u64,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Wall-clock columns are left empty unless set, so that reruns produce
    /// identical files.
    #[serde(default)]
    pub record_runtimes: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// `count` evenly spaced levels from 0 to `max` inclusive.
pub fn sigma_grid(count: usize, max: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|k| max * k as f64 / (count - 1) as f64).collect(),
    }
}

impl MonteCarloConfig {
    pub fn from_profile(profile: Profile, scenario: &str) -> Self {
        let (seeds, sigmas) = match profile {
            Profile::Desk => (10, vec![0.0, 0.05, 0.1, 0.15, 0.2]),
            Profile::Full => (40, sigma_grid(22, 0.252)),
        };
        Self {
            scenario: scenario.to_string(),
            seeds,
            sigmas,
            kinds: vec![ObservationKind::Full, ObservationKind::Partial],
            methods: vec![EstimationMethod::Joint, EstimationMethod::Baseline],
            master_seed: 0,
            threads: None,
            record_runtimes: false,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(GameError::Config("seeds must be at least 1".into()));
        }
        if self.sigmas.is_empty() {
            return Err(GameError::Config("noise grid is empty".into()));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(GameError::Config("noise levels must be finite and nonnegative".into()));
        }
        if self.sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GameError::Config("noise levels must be strictly ascending".into()));
        }
        if self.kinds.is_empty() || self.methods.is_empty() {
            return Err(GameError::Config("need at least one observation kind and one method".into()));
        }
        if self.threads == Some(0) {
            return Err(GameError::Config("threads must be at least 1".into()));
        }
        build_scenario(&self.scenario)?;
        Ok(())
    }
}

/// One (noise level, seed, observation kind, method) estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub scenario: String,
    pub method: EstimationMethod,
    pub obs_kind: ObservationKind,
    pub sigma: f64,
    pub seed_index: usize,
    pub noise_seed: u64,
    pub cosine_error: Option<f64>,
    /// Missing for failed estimates.
    pub position_error: Option<f64>,
    pub failed: bool,
    pub failure: Option<String>,
    pub status: Option<EstimationStatus>,
    pub nll: Option<f64>,
    pub presolve_nll: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub estimate_runtime_s: Option<f64>,
    pub predict_runtime_s: Option<f64>,
}

/// Noise seed of cell `(sigma_index, seed_index)`: the first word of a
/// ChaCha8 stream keyed by the master seed.
pub fn noise_seed(master_seed: u64, sigma_index: usize, seed_index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((sigma_index as u64) << 32) | seed_index as u64);
    rng.next_u64()
}

/// Everything a sweep shares across cells.
pub struct Study {
    pub scenario: Scenario,
    pub demonstration: ForwardSolution,
    pub inverse: InverseConfig,
    pub forward: ForwardConfig,
}

impl Study {
    /// Builds the scenario and its demonstration. The demonstration must be
    /// a converged equilibrium (iterated best response verified by Newton).
    pub fn new(scenario_id: &str, inverse: InverseConfig, forward: ForwardConfig) -> Result<Self> {
        let scenario = build_scenario(scenario_id)?;
        let demonstration = solve_forward(&scenario.game, &scenario.theta_true, &forward, None)?;
        if !demonstration.converged() {
            return Err(GameError::Config(format!(
                "demonstration for `{scenario_id}` did not converge (|G| = {:.3e})",
                demonstration.residual_norm
            )));
        }
        Ok(Self {
            scenario,
            demonstration,
            inverse,
            forward,
        })
    }

    /// Rows of one cell, ordered by observation kind then method.
    pub fn run_cell(&self, config: &MonteCarloConfig, sigma_index: usize, seed_index: usize) -> Vec<ResultRow> {
        let sigma = config.sigmas[sigma_index];
        let seed = noise_seed(config.master_seed, sigma_index, seed_index);
        let mut rows = Vec::with_capacity(config.kinds.len() * config.methods.len());
        for &kind in &config.kinds {
            let obs = ObservationModel::new(kind, sigma)
                .and_then(|m| observe(&self.scenario.game, &self.demonstration.trajectory, &m, seed));
            for &method in &config.methods {
                let mut row = ResultRow {
                    schema_version: CSV_SCHEMA_VERSION,
                    scenario: self.scenario.id.clone(),
                    method,
                    obs_kind: kind,
                    sigma,
                    seed_index,
                    noise_seed: seed,
                    cosine_error: None,
                    position_error: None,
                    failed: true,
                    failure: None,
                    status: None,
                    nll: None,
                    presolve_nll: None,
                    kkt_residual: None,
                    iterations: None,
                    estimate_runtime_s: None,
                    predict_runtime_s: None,
                };
                match &obs {
                    Ok(obs) => {
                        let start = Instant::now();
                        let est = match method {
                            EstimationMethod::Joint => solve_inverse_joint(&self.scenario.game, obs, &self.inverse),
                            EstimationMethod::Baseline => {
                                solve_inverse_baseline(&self.scenario.game, obs, &self.inverse)
                            }
                        };
                        if config.record_runtimes {
                            row.estimate_runtime_s = Some(start.elapsed().as_secs_f64());
                        }
                        match est {
                            Ok(est) => self.score(config, &est, &mut row),
                            Err(e) => {
                                log::warn!("{} σ={sigma} seed {seed_index}: {e}", method.as_str());
                                row.failure = Some("error".into());
                            }
                        }
                    }
                    Err(e) => {
                        log::warn!("σ={sigma} seed {seed_index}: {e}");
                        row.failure = Some("error".into());
                    }
                }
                rows.push(row);
            }
        }
        rows
    }

    fn score(&self, config: &MonteCarloConfig, est: &EstimationResult, row: &mut ResultRow) {
        row.status = Some(est.status);
        row.nll = Some(est.nll);
        row.presolve_nll = Some(est.presolve_nll);
        row.kkt_residual = Some(est.kkt_residual);
        row.iterations = Some(est.iterations);
        row.cosine_error = cosine_error(&self.scenario.theta_true, &est.theta).ok();
        if let Some(kind) = est.failure {
            row.failure = Some(kind.as_str().into());
            return;
        }
        let start = Instant::now();
        let pred = predict(&self.scenario.game, &est.theta, &self.forward, Some(&est.trajectory));
        if config.record_runtimes {
            row.predict_runtime_s = Some(start.elapsed().as_secs_f64());
        }
        match pred {
            Ok(p) if p.converged() => {
                row.position_error = position_error(&p.trajectory, &self.demonstration.trajectory).ok();
                row.failed = row.position_error.is_none();
                if row.failed {
                    row.failure = Some("error".into());
                }
            }
            Ok(_) => row.failure = Some(FailureKind::ForwardIllConditioned.as_str().into()),
            Err(e) => {
                log::warn!("prediction failed: {e}");
                row.failure = Some(FailureKind::ForwardIllConditioned.as_str().into());
            }
        }
    }
}

/// Runs the sweep with default solver settings, writing CSV to
/// `config.output` when set.
pub fn run_monte_carlo(config: &MonteCarloConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let study = Study::new(&config.scenario, InverseConfig::default(), ForwardConfig::default())?;
    match &config.output {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            run_study(&study, config, Some(std::io::BufWriter::new(file)))
        }
        None => run_study::<std::fs::File>(&study, config, None),
    }
}

/// Cells run on a bounded worker pool; rows reach `sink` in cell order
/// through a single writer as soon as each prefix of cells is complete.
pub fn run_study<W: Write + Send>(study: &Study, config: &MonteCarloConfig, sink: Option<W>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| GameError::Config(format!("worker pool: {e}")))?;
    let cells: Vec<(usize, usize)> = (0..config.sigmas.len())
        .flat_map(|s| (0..config.seeds).map(move |k| (s, k)))
        .collect();
    let (tx, rx) = mpsc::channel::<(usize, Vec<ResultRow>)>();

    std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> Result<Vec<ResultRow>> {
            let mut csv = sink.map(|w| csv::Writer::from_writer(w));
            let mut pending = BTreeMap::new();
            let mut next = 0;
            let mut all = Vec::new();
            for (index, rows) in rx {
                pending.insert(index, rows);
                while let Some(rows) = pending.remove(&next) {
                    if let Some(w) = csv.as_mut() {
                        for row in &rows {
                            w.serialize(row)?;
                        }
                        w.flush()?;
                    }
                    all.extend(rows);
                    next += 1;
                }
            }
            if let Some(mut w) = csv {
                w.flush()?;
            }
            Ok(all)
        });
        pool.install(|| {
            cells.par_iter().enumerate().for_each_with(tx, |tx, (index, &(s, k))| {
                let rows = study.run_cell(config, s, k);
                // The writer only stops early on an I/O error, reported below.
                let _ = tx.send((index, rows));
            });
        });
        writer.join().expect("writer thread panicked")
    })
}
