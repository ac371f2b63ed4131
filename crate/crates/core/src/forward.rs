//! Forward games: equilibrium trajectories for given cost weights.

use olne_nlp::{solve_with_multipliers, NlpProblem, ObjectiveEval, SolveStatus, SolverConfig, SparseMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::{player_state, DynamicsModel, GameDefinition, Trajectory, INPUT_DIM, STATE_DIM};
use crate::error::{check_len, GameError, Result};
use crate::kkt::{fit_costates, kkt_unchecked, least_squares_step, recursive_costates, KktPoint, VariableLayout};
use crate::objectives::{basis_term, cost_gradients, CostBasis, CostParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardStatus {
    Converged,
    MaxIterations,
    IllConditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMethod {
    Newton,
    Ibr,
    /// Iterated best response polished by Newton.
    IbrNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSolution {
    pub trajectory: Trajectory,
    /// `‖G‖∞` at the returned point.
    pub residual_norm: f64,
    pub dynamics_residual: f64,
    pub status: ForwardStatus,
    pub method: ForwardMethod,
    pub iterations: usize,
}

impl ForwardSolution {
    pub fn converged(&self) -> bool {
        self.status == ForwardStatus::Converged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardConfig {
    /// Newton stops once `‖G‖∞` falls below this.
    pub tol: f64,
    pub max_newton_iterations: usize,
    pub mu_initial: f64,
    pub mu_max: f64,
    pub armijo: f64,
    /// Newton continuation stages on the coupling weights; 0 disables.
    pub continuation_stages: usize,
    pub ibr_max_sweeps: usize,
    /// IBR gives up after this many consecutive sweeps with an unsolved best response.
    pub ibr_max_unsolved_sweeps: usize,
    /// Largest joint input change that ends the sweeps.
    pub ibr_tol: f64,
    /// An IBR fixed point counts as converged when `‖G‖∞` is below this.
    pub ibr_residual_tol: f64,
    pub best_response: SolverConfig,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_newton_iterations: 100,
            mu_initial: 1e-8,
            mu_max: 1e-2,
            armijo: 1e-4,
            continuation_stages: 4,
            ibr_max_sweeps: 100,
            ibr_max_unsolved_sweeps: 3,
            ibr_tol: 1e-6,
            ibr_residual_tol: 1e-6,
            best_response: SolverConfig {
                tol_feas: 1e-10,
                tol_opt: 1e-10,
                max_outer: 60,
                max_inner: 300,
                ..SolverConfig::default()
            },
        }
    }
}

fn check_theta(game: &GameDefinition, theta: &CostParameters) -> Result<()> {
    theta.check_shape(game)?;
    for (i, w) in theta.weights.iter().enumerate() {
        if let Some(v) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(GameError::ParameterDomain(format!(
                "player {i} has weight {v}; weights must be finite and nonnegative"
            )));
        }
    }
    Ok(())
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Damped Newton root-finding on `G = 0` from `init`; `x_0` is taken from the game.
///
/// With `continuation_stages = k > 0` the weights of coupling bases (those
/// that depend on other players' states) are first scaled by `0, 1/k, …`
/// and each stage warm-starts the next; the last stage solves the actual game.
pub fn solve_olne_newton(
    game: &GameDefinition,
    theta: &CostParameters,
    init: &Trajectory,
    config: &ForwardConfig,
) -> Result<ForwardSolution> {
    game.validate()?;
    game.check_trajectory(init)?;
    check_theta(game, theta)?;

    let stages = config.continuation_stages;
    let mut current = init.clone();
    let mut total = 0;
    for k in 0..stages {
        let scale = k as f64 / stages as f64;
        let mut scaled = theta.clone();
        for (w, p) in scaled.weights.iter_mut().zip(&game.players) {
            for (v, b) in w.iter_mut().zip(&p.bases) {
                if b.is_coupling() {
                    *v *= scale;
                }
            }
        }
        let stage = damped_newton(game, &scaled, &current, config)?;
        log::debug!("continuation stage {k}: {:?} |G| {:.3e}", stage.status, stage.residual_norm);
        total += stage.iterations;
        if stage.status == ForwardStatus::IllConditioned {
            return Ok(ForwardSolution {
                iterations: total,
                ..stage
            });
        }
        if stage.residual_norm.is_finite() {
            current = stage.trajectory;
        }
    }
    let mut out = damped_newton(game, theta, &current, config)?;
    out.iterations += total;
    Ok(out)
}

fn damped_newton(
    game: &GameDefinition,
    theta: &CostParameters,
    init: &Trajectory,
    config: &ForwardConfig,
) -> Result<ForwardSolution> {
    let mut start = init.clone();
    start.states[0] = game.initial_state();
    let costates = match &init.costates {
        Some(c) => c.clone(),
        None => fit_costates(game, &start, theta)?,
    };
    let mut point = KktPoint {
        costates,
        ..KktPoint::new(game, &start, theta)
    };
    let layout = VariableLayout::forward(game);
    let mut status = ForwardStatus::MaxIterations;
    let mut iterations = 0;
    let mut sys = kkt_unchecked(game, &point, Some(&layout));

    loop {
        let norm = sys.norm_inf();
        log::trace!("newton {iterations}: |G| = {norm:.3e}");
        if norm <= config.tol {
            status = ForwardStatus::Converged;
            break;
        }
        if iterations >= config.max_newton_iterations || !norm.is_finite() {
            break;
        }
        iterations += 1;
        let jac = sys.jacobian.as_ref().unwrap();
        let f0 = half_sq(&sys.residual);
        let z = layout.pack(&point);
        // Regularization grows ×10 on factorization failure; past `mu_max` the
        // system is declared ill-conditioned.
        let mut mu = config.mu_initial;
        let mut accepted = None;
        let mut singular = false;
        while accepted.is_none() {
            let Some(step) = least_squares_step(jac, &sys.residual, mu) else {
                mu *= 10.0;
                if mu > config.mu_max {
                    singular = true;
                    break;
                }
                continue;
            };
            let slope: f64 = jac.mul_vec(&step).iter().zip(&sys.residual).map(|(a, b)| a * b).sum();
            let mut alpha = 1.0;
            while alpha >= 1e-10 {
                let trial_z: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
                let trial = layout.unpack(&trial_z, &point);
                let trial_sys = kkt_unchecked(game, &trial, Some(&layout));
                let f = half_sq(&trial_sys.residual);
                if f.is_finite() && f <= f0 + config.armijo * alpha * slope {
                    accepted = Some((trial, trial_sys));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_none() {
                break;
            }
        }
        if singular {
            status = ForwardStatus::IllConditioned;
            break;
        }
        match accepted {
            Some((p, s)) => {
                point = p;
                sys = s;
            }
            None => break,
        }
    }

    let mut trajectory = point.trajectory();
    let dynamics_residual = sys.dynamics_norm_inf();
    trajectory.feasible = dynamics_residual <= 1e-6;
    Ok(ForwardSolution {
        residual_norm: sys.norm_inf(),
        dynamics_residual,
        trajectory,
        status,
        method: ForwardMethod::Newton,
        iterations,
    })
}

/// Player `i`'s optimal-control problem with the other players' trajectories frozen.
///
/// Unknowns are ordered `u_0, x_1, u_1, …, x_{T−1}, u_{T−1}` (own blocks only).
struct BestResponse<'a> {
    game: &'a GameDefinition,
    weights: &'a [f64],
    player: usize,
    states: &'a [Vec<f64>],
    inputs: &'a [Vec<f64>],
}

impl BestResponse<'_> {
    fn x_at(t: usize) -> usize {
        debug_assert!(t >= 1);
        INPUT_DIM + (STATE_DIM + INPUT_DIM) * (t - 1)
    }

    fn u_at(t: usize) -> usize {
        if t == 0 {
            0
        } else {
            Self::x_at(t) + STATE_DIM
        }
    }

    fn pack(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
        let o = STATE_DIM * self.player;
        let q = INPUT_DIM * self.player;
        let mut z = vec![0.0; self.dim()];
        for t in 0..self.game.horizon {
            if t >= 1 {
                z[Self::x_at(t)..Self::x_at(t) + STATE_DIM].copy_from_slice(&states[t][o..o + STATE_DIM]);
            }
            z[Self::u_at(t)..Self::u_at(t) + INPUT_DIM].copy_from_slice(&inputs[t][q..q + INPUT_DIM]);
        }
        z
    }

    fn own_state(&self, z: &[f64], t: usize) -> [f64; STATE_DIM] {
        if t == 0 {
            player_state(&self.states[0], self.player)
        } else {
            let s = &z[Self::x_at(t)..Self::x_at(t) + STATE_DIM];
            [s[0], s[1], s[2], s[3]]
        }
    }

    fn own_input(z: &[f64], t: usize) -> [f64; INPUT_DIM] {
        [z[Self::u_at(t)], z[Self::u_at(t) + 1]]
    }

    fn global(&self, z: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = self.states[t].clone();
        let mut u = self.inputs[t].clone();
        let o = STATE_DIM * self.player;
        x[o..o + STATE_DIM].copy_from_slice(&self.own_state(z, t));
        let q = INPUT_DIM * self.player;
        u[q..q + INPUT_DIM].copy_from_slice(&Self::own_input(z, t));
        (x, u)
    }

    fn model(&self) -> DynamicsModel {
        self.game.players[self.player].dynamics
    }
}

impl NlpProblem for BestResponse<'_> {
    fn dim(&self) -> usize {
        INPUT_DIM + (STATE_DIM + INPUT_DIM) * (self.game.horizon - 1)
    }

    fn num_constraints(&self) -> usize {
        STATE_DIM * (self.game.horizon - 1)
    }

    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let o = STATE_DIM * self.player;
        let mut value = 0.0;
        let mut gradient = vec![0.0; self.dim()];
        let mut hessian = Vec::new();
        for t in 0..self.game.horizon {
            let (x, u) = self.global(z, t);
            let cu = Self::u_at(t);
            for (b, w) in self.game.players[self.player].bases.iter().zip(self.weights) {
                let term = basis_term(self.game, b, self.player, t, &x, &u);
                value += w * term.value;
                for c in 0..INPUT_DIM {
                    gradient[cu + c] += w * term.grad_u[c];
                    hessian.push((cu + c, cu + c, w * term.hess_uu[c][c]));
                }
                if t == 0 {
                    continue;
                }
                let cx = Self::x_at(t);
                for &(k, g) in &term.grad_x {
                    if (o..o + STATE_DIM).contains(&k) {
                        gradient[cx + k - o] += w * g;
                    }
                }
                for &(k, l, h) in &term.hess_xx {
                    if (o..o + STATE_DIM).contains(&k) && (o..o + STATE_DIM).contains(&l) && l >= k {
                        hessian.push((cx + k - o, cx + l - o, w * h));
                    }
                }
            }
        }
        ObjectiveEval {
            value,
            gradient,
            curvature: olne_nlp::Curvature::Hessian(hessian),
        }
    }

    fn objective_value(&self, z: &[f64]) -> f64 {
        let mut value = 0.0;
        for t in 0..self.game.horizon {
            let (x, u) = self.global(z, t);
            for (b, w) in self.game.players[self.player].bases.iter().zip(self.weights) {
                value += w * basis_term(self.game, b, self.player, t, &x, &u).value;
            }
        }
        value
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.num_constraints());
        for t in 0..self.game.horizon - 1 {
            let pred = self
                .model()
                .step(&self.own_state(z, t), &Self::own_input(z, t), self.game.dt);
            let next = self.own_state(z, t + 1);
            c.extend((0..STATE_DIM).map(|k| next[k] - pred[k]));
        }
        c
    }

    fn constraint_jacobian(&self, z: &[f64]) -> SparseMatrix {
        let mut j = SparseMatrix::with_capacity(self.num_constraints(), self.dim(), 14 * self.num_constraints());
        for t in 0..self.game.horizon - 1 {
            let row = STATE_DIM * t;
            let (a, b) = self.model().jacobians(&self.own_state(z, t), self.game.dt);
            for r in 0..STATE_DIM {
                j.push(row + r, Self::x_at(t + 1) + r, 1.0);
                if t >= 1 {
                    for c in 0..STATE_DIM {
                        j.push(row + r, Self::x_at(t) + c, -a[r][c]);
                    }
                }
                for c in 0..INPUT_DIM {
                    j.push(row + r, Self::u_at(t) + c, -b[r][c]);
                }
            }
        }
        j
    }

    fn constraint_curvature(&self, z: &[f64], weights: &[f64]) -> Option<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        for t in 1..self.game.horizon - 1 {
            let w = &weights[STATE_DIM * t..STATE_DIM * (t + 1)];
            let h = self.model().weighted_state_hessian(&self.own_state(z, t), self.game.dt, w);
            let cx = Self::x_at(t);
            for a in 0..STATE_DIM {
                for b in a..STATE_DIM {
                    if h[a][b] != 0.0 {
                        out.push((cx + a, cx + b, -h[a][b]));
                    }
                }
            }
        }
        Some(out)
    }
}

/// Evaluates `G` at a trajectory with costates from the backward recursion.
fn certify(game: &GameDefinition, theta: &CostParameters, traj: Trajectory) -> Result<(Trajectory, f64, f64)> {
    let costates = recursive_costates(game, &traj, theta)?;
    let traj = traj.with_costates(costates);
    let sys = kkt_unchecked(game, &KktPoint::new(game, &traj, theta), None);
    Ok((traj, sys.norm_inf(), sys.dynamics_norm_inf()))
}

/// Iterated best response (Gauss-Seidel over players) from `init`'s inputs.
pub fn solve_olne_ibr(
    game: &GameDefinition,
    theta: &CostParameters,
    init: &Trajectory,
    config: &ForwardConfig,
) -> Result<ForwardSolution> {
    game.validate()?;
    game.check_trajectory(init)?;
    check_theta(game, theta)?;

    let x0 = game.initial_state();
    let mut inputs = init.inputs.clone();
    let mut multipliers: Vec<Option<Vec<f64>>> = vec![None; game.num_players()];
    let mut fixed_point = false;
    let mut sweeps = 0;
    let mut failed = false;
    let mut unsolved_sweeps = 0;

    while sweeps < config.ibr_max_sweeps && !failed {
        sweeps += 1;
        let previous = inputs.clone();
        let mut unsolved = false;
        for i in 0..game.num_players() {
            let states = game.rollout(&x0, &inputs)?.states;
            let problem = BestResponse {
                game,
                weights: theta.player(i),
                player: i,
                states: &states,
                inputs: &inputs,
            };
            let z0 = problem.pack(&states, &inputs);
            let y0 = multipliers[i]
                .take()
                .unwrap_or_else(|| vec![0.0; problem.num_constraints()]);
            let sol = solve_with_multipliers(&problem, &z0, &y0, &config.best_response);
            if sol.status == SolveStatus::Diverged {
                failed = true;
                break;
            }
            unsolved |= sol.status != SolveStatus::Converged;
            log::trace!(
                "ibr sweep {sweeps} player {i}: {:?} feas {:.2e} stat {:.2e}",
                sol.status,
                sol.feasibility,
                sol.stationarity
            );
            for t in 0..game.horizon {
                let u = BestResponse::own_input(&sol.z, t);
                inputs[t][INPUT_DIM * i..INPUT_DIM * (i + 1)].copy_from_slice(&u);
            }
            multipliers[i] = Some(sol.multipliers);
        }
        let change = previous
            .iter()
            .flatten()
            .zip(inputs.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        log::debug!("ibr sweep {sweeps}: input change {change:.3e}");
        unsolved_sweeps = if unsolved { unsolved_sweeps + 1 } else { 0 };
        if !change.is_finite() || unsolved_sweeps >= config.ibr_max_unsolved_sweeps.max(1) {
            failed = true;
        } else if change <= config.ibr_tol {
            fixed_point = true;
            break;
        }
    }

    let traj = game.rollout(&x0, &inputs)?;
    let (mut trajectory, residual_norm, dynamics_residual) = certify(game, theta, traj)?;
    let converged = fixed_point && residual_norm <= config.ibr_residual_tol;
    trajectory.feasible = dynamics_residual <= 1e-6;
    Ok(ForwardSolution {
        trajectory,
        residual_norm,
        dynamics_residual,
        status: if converged {
            ForwardStatus::Converged
        } else {
            ForwardStatus::MaxIterations
        },
        method: ForwardMethod::Ibr,
        iterations: sweeps,
    })
}

/// Closed-loop rollout steering every player toward its goal (or along its
/// reference lane) with a proportional controller.
pub fn straight_to_goal_init(game: &GameDefinition) -> Trajectory {
    let horizon_time = game.horizon as f64 * game.dt;
    let mut states = vec![game.initial_state()];
    let mut inputs = Vec::with_capacity(game.horizon);
    for t in 0..game.horizon {
        let x = &states[t];
        let mut u = vec![0.0; game.input_dim()];
        for (i, spec) in game.players.iter().enumerate() {
            let s = player_state(x, i);
            let target = spec.bases.iter().find_map(|b| match b {
                CostBasis::Goal { position, .. } => {
                    let d = ((position[0] - s[0]).powi(2) + (position[1] - s[1]).powi(2)).sqrt();
                    Some((*position, d / horizon_time))
                }
                CostBasis::LaneSpeed { lane_y, speed } => Some(([s[0] + 4.0 * speed.max(1.0), *lane_y], *speed)),
                _ => None,
            });
            let Some((p, speed)) = target else { continue };
            let c = match spec.dynamics {
                DynamicsModel::Unicycle => {
                    let heading = (p[1] - s[1]).atan2(p[0] - s[0]);
                    let err = wrap_angle(heading - s[2]);
                    [(0.5 * err).clamp(-0.5, 0.5), (0.5 * (speed - s[3])).clamp(-1.0, 1.0)]
                }
                DynamicsModel::DoubleIntegrator => {
                    let gain = 0.5;
                    [
                        gain * (p[0] - s[0]) * 0.2 - gain * s[2],
                        gain * (p[1] - s[1]) * 0.2 - gain * s[3],
                    ]
                }
            };
            u[INPUT_DIM * i..INPUT_DIM * (i + 1)].copy_from_slice(&c);
        }
        if t + 1 < game.horizon {
            states.push(game.step_unchecked(x, &u));
        }
        inputs.push(u);
    }
    Trajectory {
        states,
        inputs,
        costates: None,
        feasible: true,
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Equilibrium from deterministic initializations: the zero-input rollout,
/// the straight-to-goal rollout and optionally `extra`. Each start runs IBR
/// polished by Newton, then plain Newton; the first converged result wins.
pub fn solve_forward(
    game: &GameDefinition,
    theta: &CostParameters,
    config: &ForwardConfig,
    extra: Option<&Trajectory>,
) -> Result<ForwardSolution> {
    game.validate()?;
    check_theta(game, theta)?;
    if let Some(e) = extra {
        game.check_trajectory(e)?;
    }
    let mut inits = vec![game.zero_input_rollout(), straight_to_goal_init(game)];
    if let Some(e) = extra {
        let mut e = game.rollout(&game.initial_state(), &e.inputs)?;
        e.costates = None;
        inits.push(e);
    }
    let mut best: Option<ForwardSolution> = None;
    let keep = |s: ForwardSolution, best: &mut Option<ForwardSolution>| {
        if best.as_ref().is_none_or(|b| s.residual_norm < b.residual_norm) {
            *best = Some(s);
        }
    };
    for (k, init) in inits.iter().enumerate() {
        let ibr = solve_olne_ibr(game, theta, init, config)?;
        log::debug!("init {k}: ibr {:?} |G| {:.3e}", ibr.status, ibr.residual_norm);
        if ibr.residual_norm.is_finite() {
            let polish = ForwardConfig {
                continuation_stages: 0,
                ..config.clone()
            };
            let mut polished = solve_olne_newton(game, theta, &ibr.trajectory, &polish)?;
            if polished.converged() {
                polished.method = ForwardMethod::IbrNewton;
                polished.iterations += ibr.iterations;
                return Ok(polished);
            }
            keep(polished, &mut best);
        }
        let newton = solve_olne_newton(game, theta, init, config)?;
        log::debug!("init {k}: newton {:?} |G| {:.3e}", newton.status, newton.residual_norm);
        if newton.converged() {
            return Ok(newton);
        }
        keep(newton, &mut best);
    }
    let mut out = best.expect("at least two initializations");
    out.status = ForwardStatus::IllConditioned;
    Ok(out)
}

/// `d/dα Jⁱ(uⁱ + α d, u⁻ⁱ)` at `α = 0`, through the linearized rollout from the
/// solution's initial state. `direction` is `T × 2` and is normalized to unit
/// Euclidean norm; the zero direction gives zero.
pub fn unilateral_deviation_check(
    game: &GameDefinition,
    theta: &CostParameters,
    solution: &Trajectory,
    player: usize,
    direction: &[Vec<f64>],
) -> Result<f64> {
    game.check_trajectory(solution)?;
    check_theta(game, theta)?;
    check_len("direction sequence", game.horizon, direction.len())?;
    for d in direction {
        check_len("player input direction", INPUT_DIM, d.len())?;
    }
    let norm = direction.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let grads = cost_gradients(game, solution, theta.player(player), player)?;
    let o = STATE_DIM * player;
    let model = game.players[player].dynamics;
    let mut dx = [0.0; STATE_DIM];
    let mut total = 0.0;
    for t in 0..game.horizon {
        let d = [direction[t][0] / norm, direction[t][1] / norm];
        total += (0..STATE_DIM).map(|k| grads.state[t][o + k] * dx[k]).sum::<f64>();
        total += grads.input[t][0] * d[0] + grads.input[t][1] * d[1];
        let (a, b) = model.jacobians(&player_state(&solution.states[t], player), game.dt);
        let mut next = [0.0; STATE_DIM];
        for r in 0..STATE_DIM {
            next[r] = (0..STATE_DIM).map(|c| a[r][c] * dx[c]).sum::<f64>()
                + (0..INPUT_DIM).map(|c| b[r][c] * d[c]).sum::<f64>();
        }
        dx = next;
    }
    Ok(total)
}

/// Player `i`'s total cost after replacing its inputs by `inputs + alpha·direction`
/// and re-simulating from the solution's initial state.
pub fn deviated_cost(
    game: &GameDefinition,
    theta: &CostParameters,
    solution: &Trajectory,
    player: usize,
    direction: &[Vec<f64>],
    alpha: f64,
) -> Result<f64> {
    check_len("direction sequence", game.horizon, direction.len())?;
    let inputs: Vec<Vec<f64>> = solution
        .inputs
        .iter()
        .zip(direction)
        .map(|(u, d)| {
            let mut u = u.clone();
            u[INPUT_DIM * player] += alpha * d[0];
            u[INPUT_DIM * player + 1] += alpha * d[1];
            u
        })
        .collect();
    let traj = game.rollout(&solution.states[0], &inputs)?;
    crate::objectives::total_cost(game, &traj, theta.player(player), player)
}
