//! Cost-weight estimation from noisy observations of one equilibrium
//! trajectory.
//!
//! Both estimators start from a likelihood presolve: the trajectory that best
//! explains the observations subject only to the dynamics. The joint
//! estimator then maximizes the likelihood over `(θ, x, u, λ)` subject to the
//! equilibrium conditions `G = 0`; the baseline freezes the presolve trajectory
//! and minimizes `‖G‖²` over `(θ, λ)`.

use olne_nlp::{solve, solve_with_multipliers, NlpProblem, ObjectiveEval, SolveStatus, SolverConfig, SparseMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::{player_state, GameDefinition, Trajectory, INPUT_DIM, STATE_DIM};
use crate::error::{GameError, Result};
use crate::forward::{solve_forward, wrap_angle, ForwardConfig, ForwardSolution};
use crate::kkt::{dynamics_system, fit_costates, kkt_unchecked, kkt_weighted_hessian, KktPoint, VariableLayout};
use crate::objectives::{CostParameters, ParameterDomain};
use crate::observation::{neg_log_likelihood, Channel, ObservationSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct InverseConfig {
    pub domain: ParameterDomain,
    /// Run the likelihood presolve before the joint solve. When off, the
    /// joint solve starts from finite differences of the observations.
    pub presolve: bool,
    pub presolve_solver: SolverConfig,
    pub solver: SolverConfig,
    pub baseline_solver: SolverConfig,
    /// `‖G‖∞` a joint estimate must reach to count as converged.
    pub kkt_tol: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            domain: ParameterDomain::default(),
            presolve: true,
            presolve_solver: SolverConfig {
                tol_feas: 1e-9,
                tol_opt: 1e-9,
                max_outer: 60,
                max_inner: 200,
                ..SolverConfig::default()
            },
            solver: SolverConfig {
                tol_feas: 1e-8,
                tol_opt: 1e-7,
                max_outer: 60,
                max_inner: 200,
                initial_penalty: 1e-2,
                max_penalty: 1e6,
                ..SolverConfig::default()
            },
            baseline_solver: SolverConfig {
                tol_feas: 1e-10,
                tol_opt: 1e-10,
                max_outer: 40,
                max_inner: 200,
                ..SolverConfig::default()
            },
            kkt_tol: 1e-6,
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.domain.effort_floor >= 0.0 && self.domain.effort_floor.is_finite()) {
            return Err(GameError::Config(format!(
                "effort floor must be finite and nonnegative, got {}",
                self.domain.effort_floor
            )));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(GameError::Config("KKT tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMethod {
    Joint,
    Baseline,
}

impl EstimationMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for EstimationMethod {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "baseline" => Ok(Self::Baseline),
            other => Err(GameError::Config(format!(
                "unknown method `{other}` (expected joint or baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationStatus {
    Converged,
    MaxIterations,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    PresolveDiverged,
    Stage2Diverged,
    ForwardIllConditioned,
}

impl FailureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PresolveDiverged => "presolve-diverged",
            Self::Stage2Diverged => "stage2-diverged",
            Self::ForwardIllConditioned => "forward-ill-conditioned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: EstimationMethod,
    pub theta: CostParameters,
    /// Recovered trajectory with costates.
    pub trajectory: Trajectory,
    /// `Σ_t ‖y_t − h(x_t)‖²` at the recovered trajectory.
    pub nll: f64,
    /// `‖G‖∞` at the estimate.
    pub kkt_residual: f64,
    pub status: EstimationStatus,
    pub failure: Option<FailureKind>,
    pub iterations: usize,
    pub presolve_nll: f64,
    pub presolve_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Presolve {
    pub trajectory: Trajectory,
    pub nll: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Scaled observation residual `r = √(2/T)(y − h(x))`, so `½‖r‖² = NLL/T`.
struct Likelihood<'a> {
    obs: &'a ObservationSequence,
    channels: Vec<Channel>,
    scale: f64,
}

impl<'a> Likelihood<'a> {
    fn new(game: &GameDefinition, obs: &'a ObservationSequence) -> Self {
        Self {
            obs,
            channels: obs.model.channels(game),
            scale: (2.0 / game.horizon as f64).sqrt(),
        }
    }

    fn eval(&self, layout: &VariableLayout, states: &[Vec<f64>], with_jacobian: bool) -> ObjectiveEval {
        let rows = self.channels.len() * states.len();
        let mut r = Vec::with_capacity(rows);
        let mut jac = SparseMatrix::with_capacity(rows, layout.dim(), if with_jacobian { rows } else { 0 });
        for (t, (y, x)) in self.obs.y.iter().zip(states).enumerate() {
            for (c, yc) in self.channels.iter().zip(y) {
                let d = yc - x[c.state_index];
                let d = if c.angle { wrap_angle(d) } else { d };
                if with_jacobian {
                    if let Some(col) = layout.x(t) {
                        jac.push(r.len(), col + c.state_index, -self.scale);
                    }
                }
                r.push(self.scale * d);
            }
        }
        ObjectiveEval::least_squares(&r, jac)
    }

    fn value(&self, states: &[Vec<f64>]) -> f64 {
        let mut v = 0.0;
        for (y, x) in self.obs.y.iter().zip(states) {
            for (c, yc) in self.channels.iter().zip(y) {
                let d = yc - x[c.state_index];
                let d = if c.angle { wrap_angle(d) } else { d };
                v += d * d;
            }
        }
        0.5 * self.scale * self.scale * v
    }
}

fn trajectory_from(layout: &VariableLayout, game: &GameDefinition, z: &[f64]) -> Trajectory {
    let (n, m) = (game.state_dim(), game.input_dim());
    let states = (0..game.horizon)
        .map(|t| {
            let c = layout.x(t).expect("layout has every state");
            z[c..c + n].to_vec()
        })
        .collect();
    let inputs = (0..game.horizon)
        .map(|t| {
            let c = layout.u(t).expect("layout has every input");
            z[c..c + m].to_vec()
        })
        .collect();
    Trajectory {
        states,
        inputs,
        costates: None,
        feasible: false,
    }
}

fn trajectory_vector(layout: &VariableLayout, traj: &Trajectory) -> Vec<f64> {
    let mut z = vec![0.0; layout.dim()];
    for (t, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        if let Some(c) = layout.x(t) {
            z[c..c + x.len()].copy_from_slice(x);
        }
        if let Some(c) = layout.u(t) {
            z[c..c + u.len()].copy_from_slice(u);
        }
    }
    z
}

/// `Σ_k w_k ∇²F_k` for the stacked dynamics `F_t = x_{t+1} − f(x_t, u_t)`.
fn dynamics_curvature(
    game: &GameDefinition,
    layout: &VariableLayout,
    states: &[Vec<f64>],
    weights: &[f64],
    row0: usize,
    out: &mut Vec<(usize, usize, f64)>,
) {
    let n = game.state_dim();
    for t in 0..game.horizon - 1 {
        let Some(cx) = layout.x(t) else { continue };
        for (p, spec) in game.players.iter().enumerate() {
            let o = STATE_DIM * p;
            let w = &weights[row0 + n * t + o..row0 + n * t + o + STATE_DIM];
            let h = spec.dynamics.weighted_state_hessian(&player_state(&states[t], p), game.dt, w);
            for a in 0..STATE_DIM {
                for b in a..STATE_DIM {
                    if h[a][b] != 0.0 {
                        out.push((cx + o + a, cx + o + b, -h[a][b]));
                    }
                }
            }
        }
    }
}

/// Trajectory guess from the raw observations: headings unwrapped, hidden
/// channels and inputs by forward differences, last input zero.
pub fn observation_guess(game: &GameDefinition, obs: &ObservationSequence) -> Result<Trajectory> {
    obs.check(game)?;
    let (horizon, dt) = (game.horizon, game.dt);
    let per = obs.model.kind.channels_per_player();
    let mut states = vec![vec![0.0; game.state_dim()]; horizon];
    for (p, spec) in game.players.iter().enumerate() {
        let o = STATE_DIM * p;
        let angle = spec.dynamics.angle_index();
        for c in 0..per {
            let mut prev = 0.0;
            for t in 0..horizon {
                let y = obs.y[t][per * p + c];
                let v = if angle == Some(c) && t > 0 {
                    prev + wrap_angle(y - prev)
                } else {
                    y
                };
                states[t][o + c] = v;
                prev = v;
            }
        }
        if per < STATE_DIM {
            for t in 0..horizon {
                let (a, b) = if t + 1 < horizon { (t, t + 1) } else { (t.saturating_sub(1), t) };
                let dp = [
                    states[b][o] - states[a][o],
                    states[b][o + 1] - states[a][o + 1],
                ];
                states[t][o + 3] = match angle {
                    Some(k) => {
                        let (s, c) = states[a][o + k].sin_cos();
                        (dp[0] * c + dp[1] * s) / dt
                    }
                    None => dp[1] / dt,
                };
            }
        }
    }
    let inputs = (0..horizon)
        .map(|t| {
            let mut u = vec![0.0; game.input_dim()];
            if t + 1 < horizon {
                for p in 0..game.num_players() {
                    for c in 0..INPUT_DIM {
                        let k = STATE_DIM * p + 2 + c;
                        u[INPUT_DIM * p + c] = (states[t + 1][k] - states[t][k]) / dt;
                    }
                }
            }
            u
        })
        .collect();
    Ok(Trajectory {
        states,
        inputs,
        costates: None,
        feasible: false,
    })
}

struct PresolveProblem<'a> {
    game: &'a GameDefinition,
    layout: VariableLayout,
    lik: Likelihood<'a>,
}

impl NlpProblem for PresolveProblem<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn num_constraints(&self) -> usize {
        (self.game.horizon - 1) * self.game.state_dim()
    }

    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let traj = trajectory_from(&self.layout, self.game, z);
        self.lik.eval(&self.layout, &traj.states, true)
    }

    fn objective_value(&self, z: &[f64]) -> f64 {
        self.lik.value(&trajectory_from(&self.layout, self.game, z).states)
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        let traj = trajectory_from(&self.layout, self.game, z);
        self.game.dynamics_residual(&traj).expect("layout-shaped trajectory")
    }

    fn constraint_jacobian(&self, z: &[f64]) -> SparseMatrix {
        dynamics_system(self.game, &trajectory_from(&self.layout, self.game, z), &self.layout).1
    }

    fn constraint_curvature(&self, z: &[f64], weights: &[f64]) -> Option<Vec<(usize, usize, f64)>> {
        let traj = trajectory_from(&self.layout, self.game, z);
        let mut out = Vec::new();
        dynamics_curvature(self.game, &self.layout, &traj.states, weights, 0, &mut out);
        Some(out)
    }
}

/// Maximum-likelihood trajectory subject only to the dynamics.
pub fn presolve(game: &GameDefinition, obs: &ObservationSequence, config: &InverseConfig) -> Result<Presolve> {
    game.validate()?;
    config.validate()?;
    let guess = observation_guess(game, obs)?;
    let problem = PresolveProblem {
        game,
        layout: VariableLayout::trajectory(game),
        lik: Likelihood::new(game, obs),
    };
    let sol = solve(&problem, &trajectory_vector(&problem.layout, &guess), &config.presolve_solver);
    let mut trajectory = trajectory_from(&problem.layout, game, &sol.z);
    trajectory.feasible = true;
    let nll = neg_log_likelihood(game, obs, &trajectory)?;
    log::debug!(
        "presolve {:?}: nll {nll:.4e} feas {:.2e} after {} inner iterations",
        sol.status,
        sol.feasibility,
        sol.inner_iterations
    );
    if sol.status == SolveStatus::Diverged || !nll.is_finite() {
        return Err(GameError::PresolveDiverged {
            best: Box::new(trajectory),
            nll,
        });
    }
    Ok(Presolve {
        trajectory,
        nll,
        converged: sol.converged(),
        iterations: sol.inner_iterations,
    })
}

fn theta_bounds(game: &GameDefinition, layout: &VariableLayout, domain: &ParameterDomain) -> Vec<f64> {
    let mut lo = vec![f64::NEG_INFINITY; layout.dim()];
    for (i, p) in game.players.iter().enumerate() {
        for (j, b) in p.bases.iter().enumerate() {
            let c = layout.theta(i, j).expect("layout has weights");
            lo[c] = if b.is_control_effort() { domain.effort_floor } else { 0.0 };
        }
    }
    lo
}

fn push_simplex_rows(game: &GameDefinition, layout: &VariableLayout, row0: usize, jac: &mut SparseMatrix) {
    for (i, p) in game.players.iter().enumerate() {
        for j in 0..p.bases.len() {
            jac.push(row0 + i, layout.theta(i, j).expect("layout has weights"), 1.0);
        }
    }
}

fn simplex_residual(theta: &CostParameters) -> impl Iterator<Item = f64> + '_ {
    theta.weights.iter().map(|w| w.iter().sum::<f64>() - 1.0)
}

/// Projects each player's weights onto `Σ = 1` by rescaling, together with
/// that player's costates so the stationarity residual scales along.
fn renormalize(point: &mut KktPoint, domain: &ParameterDomain, game: &GameDefinition) {
    if !domain.normalized {
        return;
    }
    for (i, w) in point.theta.weights.iter_mut().enumerate() {
        let s: f64 = w.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            continue;
        }
        w.iter_mut().for_each(|v| *v /= s);
        for (b, v) in game.players[i].bases.iter().zip(w.iter_mut()) {
            if b.is_control_effort() {
                *v = v.max(domain.effort_floor);
            }
        }
        for lam in &mut point.costates[i] {
            lam.iter_mut().for_each(|v| *v /= s);
        }
    }
}

struct JointProblem<'a> {
    game: &'a GameDefinition,
    layout: VariableLayout,
    base: KktPoint,
    lik: Likelihood<'a>,
    lower: Vec<f64>,
    normalized: bool,
    g_rows: usize,
}

impl NlpProblem for JointProblem<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn num_constraints(&self) -> usize {
        self.g_rows + if self.normalized { self.game.num_players() } else { 0 }
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }

    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let p = self.layout.unpack(z, &self.base);
        self.lik.eval(&self.layout, &p.states, true)
    }

    fn objective_value(&self, z: &[f64]) -> f64 {
        self.lik.value(&self.layout.unpack(z, &self.base).states)
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        let p = self.layout.unpack(z, &self.base);
        let mut c = kkt_unchecked(self.game, &p, None).residual;
        if self.normalized {
            c.extend(simplex_residual(&p.theta));
        }
        c
    }

    fn constraint_jacobian(&self, z: &[f64]) -> SparseMatrix {
        let p = self.layout.unpack(z, &self.base);
        let g = kkt_unchecked(self.game, &p, Some(&self.layout)).jacobian.unwrap();
        let mut jac = SparseMatrix::with_capacity(self.num_constraints(), self.dim(), g.entries().len() + 64);
        for &(r, c, v) in g.entries() {
            jac.push(r, c, v);
        }
        if self.normalized {
            push_simplex_rows(self.game, &self.layout, self.g_rows, &mut jac);
        }
        jac
    }

    fn constraint_curvature(&self, z: &[f64], weights: &[f64]) -> Option<Vec<(usize, usize, f64)>> {
        let p = self.layout.unpack(z, &self.base);
        Some(kkt_weighted_hessian(self.game, &p, &self.layout, &weights[..self.g_rows]))
    }
}

fn failed_result(
    method: EstimationMethod,
    game: &GameDefinition,
    err: GameError,
) -> Result<EstimationResult> {
    match err {
        GameError::PresolveDiverged { best, nll } => {
            let theta = CostParameters::uniform(game);
            let trajectory = *best;
            let kkt_residual = kkt_residual_at(game, &trajectory, &theta);
            Ok(EstimationResult {
                method,
                theta,
                trajectory,
                nll,
                kkt_residual,
                status: EstimationStatus::Failed,
                failure: Some(FailureKind::PresolveDiverged),
                iterations: 0,
                presolve_nll: nll,
                presolve_iterations: 0,
            })
        }
        other => Err(other),
    }
}

fn kkt_residual_at(game: &GameDefinition, traj: &Trajectory, theta: &CostParameters) -> f64 {
    let point = KktPoint::new(game, traj, theta);
    kkt_unchecked(game, &point, None).norm_inf()
}

/// Joint maximum-likelihood estimate of weights, states, inputs and costates
/// under the equilibrium conditions.
pub fn solve_inverse_joint(
    game: &GameDefinition,
    obs: &ObservationSequence,
    config: &InverseConfig,
) -> Result<EstimationResult> {
    game.validate()?;
    config.validate()?;
    obs.check(game)?;
    let (start, presolve_nll, presolve_iterations) = if config.presolve {
        match presolve(game, obs, config) {
            Ok(p) => (p.trajectory, p.nll, p.iterations),
            Err(e) => return failed_result(EstimationMethod::Joint, game, e),
        }
    } else {
        let g = observation_guess(game, obs)?;
        let nll = neg_log_likelihood(game, obs, &g)?;
        (g, nll, 0)
    };

    let theta0 = CostParameters::uniform(game);
    let costates = fit_costates(game, &start, &theta0)?;
    let base = KktPoint::new(game, &start.clone().with_costates(costates), &theta0);
    let layout = VariableLayout::joint(game);
    let z0 = layout.pack(&base);
    let problem = JointProblem {
        game,
        lower: theta_bounds(game, &layout, &config.domain),
        layout,
        g_rows: crate::kkt::KktBlocks::new(game).len(),
        normalized: config.domain.normalized,
        lik: Likelihood::new(game, obs),
        base,
    };
    let sol = solve(&problem, &z0, &config.solver);
    let mut point = problem.layout.unpack(&sol.z, &problem.base);
    renormalize(&mut point, &config.domain, game);
    let sys = kkt_unchecked(game, &point, None);
    let kkt_residual = sys.norm_inf();
    log::debug!(
        "joint {:?}: feas {:.2e} stat {:.2e} |G| {kkt_residual:.2e} outer {} inner {}",
        sol.status,
        sol.feasibility,
        sol.stationarity,
        sol.outer_iterations,
        sol.inner_iterations
    );

    let diverged = sol.status == SolveStatus::Diverged || !kkt_residual.is_finite();
    if diverged {
        return Ok(EstimationResult {
            method: EstimationMethod::Joint,
            theta: point.theta,
            kkt_residual: kkt_residual_at(game, &start, &theta0),
            trajectory: start,
            nll: presolve_nll,
            status: EstimationStatus::Failed,
            failure: Some(FailureKind::Stage2Diverged),
            iterations: sol.inner_iterations,
            presolve_nll,
            presolve_iterations,
        });
    }
    let status = if sol.converged() && kkt_residual <= config.kkt_tol {
        EstimationStatus::Converged
    } else {
        EstimationStatus::MaxIterations
    };
    let mut trajectory = point.trajectory();
    trajectory.feasible = sys.dynamics_norm_inf() <= config.kkt_tol;
    let nll = neg_log_likelihood(game, obs, &trajectory)?;
    Ok(EstimationResult {
        method: EstimationMethod::Joint,
        theta: point.theta,
        trajectory,
        nll,
        kkt_residual,
        status,
        failure: None,
        iterations: sol.inner_iterations,
        presolve_nll,
        presolve_iterations,
    })
}

struct BaselineProblem<'a> {
    game: &'a GameDefinition,
    layout: VariableLayout,
    base: KktPoint,
    lower: Vec<f64>,
    normalized: bool,
}

impl NlpProblem for BaselineProblem<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn num_constraints(&self) -> usize {
        if self.normalized {
            self.game.num_players()
        } else {
            0
        }
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }

    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let p = self.layout.unpack(z, &self.base);
        let sys = kkt_unchecked(self.game, &p, Some(&self.layout));
        let rows = sys.blocks.stationarity_rows();
        let jac = sys.jacobian.unwrap();
        let mut stat = SparseMatrix::with_capacity(rows.len(), self.dim(), jac.entries().len());
        for &(r, c, v) in jac.entries() {
            if r < rows.end {
                stat.push(r, c, v);
            }
        }
        ObjectiveEval::least_squares(&sys.residual[rows], stat)
    }

    fn objective_value(&self, z: &[f64]) -> f64 {
        let p = self.layout.unpack(z, &self.base);
        let sys = kkt_unchecked(self.game, &p, None);
        0.5 * sys.residual[sys.blocks.stationarity_rows()]
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        if !self.normalized {
            return Vec::new();
        }
        simplex_residual(&self.layout.unpack(z, &self.base).theta).collect()
    }

    fn constraint_jacobian(&self, _z: &[f64]) -> SparseMatrix {
        let mut jac = SparseMatrix::new(self.num_constraints(), self.dim());
        if self.normalized {
            push_simplex_rows(self.game, &self.layout, 0, &mut jac);
        }
        jac
    }
}

/// Minimizes the stationarity residual `‖G(x̃, ũ, λ; θ)‖²` over `(θ, λ)` at
/// the presolve trajectory.
pub fn solve_inverse_baseline(
    game: &GameDefinition,
    obs: &ObservationSequence,
    config: &InverseConfig,
) -> Result<EstimationResult> {
    game.validate()?;
    config.validate()?;
    obs.check(game)?;
    let pre = match presolve(game, obs, config) {
        Ok(p) => p,
        Err(e) => return failed_result(EstimationMethod::Baseline, game, e),
    };
    baseline_from_trajectory(game, &pre.trajectory, config, pre.nll, pre.iterations)
}

/// The baseline fit at a given trajectory.
pub fn baseline_from_trajectory(
    game: &GameDefinition,
    traj: &Trajectory,
    config: &InverseConfig,
    nll: f64,
    presolve_iterations: usize,
) -> Result<EstimationResult> {
    game.check_trajectory(traj)?;
    let theta0 = CostParameters::uniform(game);
    let costates = fit_costates(game, traj, &theta0)?;
    let base = KktPoint::new(game, &traj.clone().with_costates(costates), &theta0);
    let layout = VariableLayout::baseline(game);
    let z0 = layout.pack(&base);
    let problem = BaselineProblem {
        game,
        lower: theta_bounds(game, &layout, &config.domain),
        layout,
        normalized: config.domain.normalized,
        base,
    };
    let m = problem.num_constraints();
    let sol = solve_with_multipliers(&problem, &z0, &vec![0.0; m], &config.baseline_solver);
    let mut point = problem.layout.unpack(&sol.z, &problem.base);
    renormalize(&mut point, &config.domain, game);
    let kkt_residual = kkt_unchecked(game, &point, None).norm_inf();
    log::debug!(
        "baseline {:?}: residual {kkt_residual:.3e} inner {}",
        sol.status,
        sol.inner_iterations
    );
    let (status, failure) = match sol.status {
        SolveStatus::Converged => (EstimationStatus::Converged, None),
        SolveStatus::MaxIterations => (EstimationStatus::MaxIterations, None),
        SolveStatus::Diverged => (EstimationStatus::Failed, Some(FailureKind::Stage2Diverged)),
    };
    let mut trajectory = point.trajectory();
    trajectory.feasible = traj.feasible;
    Ok(EstimationResult {
        method: EstimationMethod::Baseline,
        theta: point.theta,
        trajectory,
        nll,
        kkt_residual,
        status,
        failure,
        iterations: sol.inner_iterations,
        presolve_nll: nll,
        presolve_iterations,
    })
}

/// Forward equilibrium at estimated weights from the game's initial state.
/// `hint` (typically the recovered trajectory) adds a third initialization
/// after the zero-input and straight-to-goal rollouts.
pub fn predict(
    game: &GameDefinition,
    theta: &CostParameters,
    config: &ForwardConfig,
    hint: Option<&Trajectory>,
) -> Result<ForwardSolution> {
    solve_forward(game, theta, config, hint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsModel, PlayerSpec};
    use crate::objectives::CostBasis;
    use crate::observation::{observe, ObservationKind, ObservationModel};

    fn single(initial: [f64; 4], horizon: usize) -> GameDefinition {
        GameDefinition {
            horizon,
            dt: 0.5,
            players: vec![PlayerSpec {
                name: String::new(),
                dynamics: DynamicsModel::Unicycle,
                initial_state: initial,
                bases: vec![CostBasis::Speed, CostBasis::YawRateEffort, CostBasis::AccelerationEffort],
            }],
        }
    }

    fn wavy(game: &GameDefinition) -> Trajectory {
        let inputs = (0..game.horizon)
            .map(|t| vec![0.3 * (0.4 * t as f64).sin(), 0.2 * (0.3 * t as f64).cos()])
            .collect::<Vec<_>>();
        game.rollout(&game.initial_state(), &inputs).unwrap()
    }

    #[test]
    fn guess_unwraps_heading_and_differences_inputs() {
        let g = single([0.0, 0.0, 3.0, 1.0], 12);
        let truth = wavy(&g);
        let obs = observe(&g, &truth, &ObservationModel::new(ObservationKind::Full, 0.0).unwrap(), 0).unwrap();
        let mut wrapped = obs.clone();
        for y in &mut wrapped.y {
            y[2] = wrap_angle(y[2]);
        }
        let guess = observation_guess(&g, &wrapped).unwrap();
        for t in 0..g.horizon {
            for k in 0..4 {
                assert!((guess.states[t][k] - truth.states[t][k]).abs() < 1e-12);
            }
            if t + 1 < g.horizon {
                for c in 0..2 {
                    assert!((guess.inputs[t][c] - truth.inputs[t][c]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn presolve_recovers_exact_data() {
        let g = single([1.0, -1.0, 0.3, 1.2], 15);
        let truth = wavy(&g);
        let obs = observe(&g, &truth, &ObservationModel::new(ObservationKind::Full, 0.0).unwrap(), 0).unwrap();
        let pre = presolve(&g, &obs, &InverseConfig::default()).unwrap();
        assert!(pre.trajectory.feasible);
        for t in 0..g.horizon {
            for k in 0..4 {
                assert!((pre.trajectory.states[t][k] - truth.states[t][k]).abs() < 1e-6);
            }
            if t + 1 < g.horizon {
                for c in 0..2 {
                    assert!((pre.trajectory.inputs[t][c] - truth.inputs[t][c]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn presolve_infers_speed_from_positions() {
        let g = single([0.0, 0.0, 0.7, 1.5], 20);
        let truth = g.zero_input_rollout();
        let obs = observe(&g, &truth, &ObservationModel::new(ObservationKind::Partial, 0.0).unwrap(), 0).unwrap();
        let pre = presolve(&g, &obs, &InverseConfig::default()).unwrap();
        for x in &pre.trajectory.states {
            assert!((x[3] - 1.5).abs() < 1e-3, "{}", x[3]);
        }
    }

    #[test]
    fn presolve_beats_truth_on_noisy_data() {
        let g = single([0.0, 0.0, 0.2, 1.0], 20);
        let truth = wavy(&g);
        let obs = observe(&g, &truth, &ObservationModel::new(ObservationKind::Partial, 0.1).unwrap(), 4).unwrap();
        let pre = presolve(&g, &obs, &InverseConfig::default()).unwrap();
        assert!(pre.converged);
        assert!(pre.nll <= neg_log_likelihood(&g, &obs, &truth).unwrap());
        assert!(g.dynamics_residual(&pre.trajectory).unwrap().iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn renormalize_scales_costates() {
        let g = single([0.0, 0.0, 0.2, 1.0], 6);
        let traj = wavy(&g);
        let theta = CostParameters::new(vec![vec![0.4, 0.4, 0.4]]);
        let mut p = KktPoint::new(&g, &traj, &theta);
        p.costates = fit_costates(&g, &traj, &theta).unwrap();
        let before = kkt_unchecked(&g, &p, None).stationarity_norm_inf();
        renormalize(&mut p, &ParameterDomain::default(), &g);
        assert!((p.theta.weights[0].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let after = kkt_unchecked(&g, &p, None).stationarity_norm_inf();
        assert!((after - before / 1.2).abs() < 1e-12);
    }

    #[test]
    fn joint_lagrangian_hessian_matches_differences() {
        let s = crate::experiments::build_scenario("two-player-crossing").unwrap();
        let demo = crate::forward::solve_forward(&s.game, &s.theta_true, &Default::default(), None).unwrap();
        let obs = observe(&s.game, &demo.trajectory, &ObservationModel::new(ObservationKind::Partial, 0.05).unwrap(), 3).unwrap();
        let game = &s.game;
        let theta0 = CostParameters::uniform(game);
        let costates = fit_costates(game, &demo.trajectory, &theta0).unwrap();
        let base = KktPoint::new(game, &demo.trajectory.clone().with_costates(costates), &theta0);
        let layout = VariableLayout::joint(game);
        let problem = JointProblem {
            game,
            lower: theta_bounds(game, &layout, &ParameterDomain::default()),
            g_rows: crate::kkt::KktBlocks::new(game).len(),
            layout,
            normalized: true,
            lik: Likelihood::new(game, &obs),
            base,
        };
        let n = problem.dim();
        let m = problem.num_constraints();
        let z: Vec<f64> = problem
            .layout
            .pack(&problem.base)
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * ((i as f64) * 0.77).sin())
            .collect();
        let w: Vec<f64> = (0..m).map(|r| ((r as f64) * 1.3).cos()).collect();
        let grad = |z: &[f64]| {
            let mut g = problem.objective(z).gradient;
            for (gi, v) in g.iter_mut().zip(problem.constraint_jacobian(z).tr_mul_vec(&w)) {
                *gi += v;
            }
            g
        };
        let obj = problem.objective(&z);
        let mut dense = vec![vec![0.0; n]; n];
        if let olne_nlp::Curvature::GaussNewton(j) = &obj.curvature {
            let d = j.to_dense();
            for row in &d {
                for a in 0..n {
                    if row[a] == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        dense[a][b] += row[a] * row[b];
                    }
                }
            }
        }
        for (i, j, v) in problem.constraint_curvature(&z, &w).unwrap() {
            dense[i][j] += v;
            if i != j {
                dense[j][i] += v;
            }
        }
        let h = 1e-6;
        let mut worst = 0.0f64;
        for k in 0..n {
            let mut zp = z.clone();
            zp[k] += h;
            let mut zm = z.clone();
            zm[k] -= h;
            let (gp, gm) = (grad(&zp), grad(&zm));
            for a in 0..n {
                let fd = (gp[a] - gm[a]) / (2.0 * h);
                let err = (fd - dense[a][k]).abs() / (1.0 + fd.abs());
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }
}
