//! Running-cost bases, linear weight parameterization and their derivatives.
//!
//! A player's running cost at step `t` is `gⁱ_t = Σ_j θⁱ_j φ_j(t, x_t, uⁱ_t)`.
//! Every basis depends either on the state or on the player's own input, never
//! on both, which keeps the mixed state/input blocks of the KKT Jacobian empty.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsModel, GameDefinition, Trajectory, INPUT_DIM, STATE_DIM};
use crate::error::{check_len, GameError, Result};

pub const DEFAULT_D_MIN: f64 = 1e-3;
pub const DEFAULT_EFFORT_FLOOR: f64 = 1e-3;

fn default_d_min() -> f64 {
    DEFAULT_D_MIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostBasis {
    /// `‖p_t − p_goal‖²` during the last steps, `t ≥ T − t_goal` (1-based `t`).
    Goal { position: [f64; 2], t_goal: usize },
    /// `Σ_{j≠i} −log ‖p_i − p_j‖²`, with a quadratic extension below `d_min`.
    Proximity {
        #[serde(default = "default_d_min")]
        d_min: f64,
    },
    /// Squared speed.
    Speed,
    /// `(uⁱ_0)²`, the yaw rate for unicycles.
    YawRateEffort,
    /// `(uⁱ_1)²`, the longitudinal acceleration for unicycles.
    AccelerationEffort,
    /// `‖uⁱ‖²`
    InputEffort,
    /// `½((p_y − lane_y)² + (v − speed)²)`
    LaneSpeed { lane_y: f64, speed: f64 },
}

impl CostBasis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Goal { .. } => "goal",
            Self::Proximity { .. } => "proximity",
            Self::Speed => "speed",
            Self::YawRateEffort => "yaw_rate_effort",
            Self::AccelerationEffort => "acceleration_effort",
            Self::InputEffort => "input_effort",
            Self::LaneSpeed { .. } => "lane_speed",
        }
    }

    /// Bases whose weights are bounded below by the effort floor.
    pub fn is_control_effort(&self) -> bool {
        matches!(self, Self::YawRateEffort | Self::AccelerationEffort | Self::InputEffort)
    }

    /// Bases that depend on other players' states.
    pub fn is_coupling(&self) -> bool {
        matches!(self, Self::Proximity { .. })
    }

    pub fn is_state_basis(&self) -> bool {
        !self.is_control_effort()
    }
}

/// `⌈T/4⌉`
pub fn default_t_goal(horizon: usize) -> usize {
    horizon.div_ceil(4)
}

/// Value and derivatives of one basis at one time step for one player.
#[derive(Debug, Clone, Default)]
pub struct BasisTerm {
    pub value: f64,
    /// Gradient w.r.t. the global state, as `(index, value)` pairs.
    pub grad_x: Vec<(usize, f64)>,
    /// Full symmetric Hessian w.r.t. the global state (both triangles).
    pub hess_xx: Vec<(usize, usize, f64)>,
    pub grad_u: [f64; INPUT_DIM],
    pub hess_uu: [[f64; INPUT_DIM]; INPUT_DIM],
    pub clamped: bool,
}

/// `−log s` above `s_min = d_min²`, C² quadratic continuation below.
fn log_barrier(s: f64, d_min: f64) -> (f64, f64, f64, bool) {
    let s_min = d_min * d_min;
    if s >= s_min {
        (-s.ln(), -1.0 / s, 1.0 / (s * s), false)
    } else {
        let ds = s - s_min;
        (
            -s_min.ln() - ds / s_min + 0.5 * ds * ds / (s_min * s_min),
            -1.0 / s_min + ds / (s_min * s_min),
            1.0 / (s_min * s_min),
            true,
        )
    }
}

/// Evaluates basis `basis` for `player` at 0-based step `t` of the game.
pub fn basis_term(
    game: &GameDefinition,
    basis: &CostBasis,
    player: usize,
    t: usize,
    state: &[f64],
    input: &[f64],
) -> BasisTerm {
    let o = STATE_DIM * player;
    let model = game.players[player].dynamics;
    let mut term = BasisTerm::default();
    match basis {
        CostBasis::Goal { position, t_goal } => {
            // 1-based t ≥ T − t_goal  ⇔  0-based t ≥ T − t_goal − 1
            if t + t_goal + 1 >= game.horizon {
                let dx = state[o] - position[0];
                let dy = state[o + 1] - position[1];
                term.value = dx * dx + dy * dy;
                term.grad_x = vec![(o, 2.0 * dx), (o + 1, 2.0 * dy)];
                term.hess_xx = vec![(o, o, 2.0), (o + 1, o + 1, 2.0)];
            }
        }
        CostBasis::Proximity { d_min } => {
            let mut grad = [0.0; 2];
            for other in 0..game.num_players() {
                if other == player {
                    continue;
                }
                let q = STATE_DIM * other;
                let delta = [state[o] - state[q], state[o + 1] - state[q + 1]];
                let s = delta[0] * delta[0] + delta[1] * delta[1];
                let (phi, dphi, ddphi, clamped) = log_barrier(s, *d_min);
                term.value += phi;
                term.clamped |= clamped;
                for k in 0..2 {
                    let gk = 2.0 * dphi * delta[k];
                    grad[k] += gk;
                    term.grad_x.push((q + k, -gk));
                }
                // ∇²φ(s) = φ''∇s∇sᵀ + φ'∇²s with ∇s = 2(Δ, −Δ), ∇²s = 2[[I, −I], [−I, I]]
                for a in 0..2 {
                    for b in 0..2 {
                        let mut h = 4.0 * ddphi * delta[a] * delta[b];
                        if a == b {
                            h += 2.0 * dphi;
                        }
                        term.hess_xx.push((o + a, o + b, h));
                        term.hess_xx.push((q + a, q + b, h));
                        term.hess_xx.push((o + a, q + b, -h));
                        term.hess_xx.push((q + a, o + b, -h));
                    }
                }
            }
            term.grad_x.push((o, grad[0]));
            term.grad_x.push((o + 1, grad[1]));
        }
        CostBasis::Speed => match model {
            DynamicsModel::Unicycle => {
                let v = state[o + 3];
                term.value = v * v;
                term.grad_x = vec![(o + 3, 2.0 * v)];
                term.hess_xx = vec![(o + 3, o + 3, 2.0)];
            }
            DynamicsModel::DoubleIntegrator => {
                let (vx, vy) = (state[o + 2], state[o + 3]);
                term.value = vx * vx + vy * vy;
                term.grad_x = vec![(o + 2, 2.0 * vx), (o + 3, 2.0 * vy)];
                term.hess_xx = vec![(o + 2, o + 2, 2.0), (o + 3, o + 3, 2.0)];
            }
        },
        CostBasis::LaneSpeed { lane_y, speed } => {
            let speed_index = match model {
                DynamicsModel::Unicycle => o + 3,
                DynamicsModel::DoubleIntegrator => o + 2,
            };
            let dy = state[o + 1] - lane_y;
            let dv = state[speed_index] - speed;
            term.value = 0.5 * (dy * dy + dv * dv);
            term.grad_x = vec![(o + 1, dy), (speed_index, dv)];
            term.hess_xx = vec![(o + 1, o + 1, 1.0), (speed_index, speed_index, 1.0)];
        }
        CostBasis::YawRateEffort | CostBasis::AccelerationEffort | CostBasis::InputEffort => {
            let u = &input[INPUT_DIM * player..INPUT_DIM * (player + 1)];
            let channels: &[usize] = match basis {
                CostBasis::YawRateEffort => &[0],
                CostBasis::AccelerationEffort => &[1],
                _ => &[0, 1],
            };
            for &c in channels {
                term.value += u[c] * u[c];
                term.grad_u[c] = 2.0 * u[c];
                term.hess_uu[c][c] = 2.0;
            }
        }
    }
    term
}

/// `∇²_x (w · ∇_x φ)` for a state basis (both triangles). Only the proximity
/// basis has nonzero third derivatives.
pub(crate) fn basis_third_contraction(
    game: &GameDefinition,
    basis: &CostBasis,
    player: usize,
    state: &[f64],
    w: &[f64],
) -> Vec<(usize, usize, f64)> {
    let CostBasis::Proximity { d_min } = basis else {
        return Vec::new();
    };
    let o = STATE_DIM * player;
    let mut out = Vec::new();
    for other in 0..game.num_players() {
        if other == player {
            continue;
        }
        let q = STATE_DIM * other;
        let delta = [state[o] - state[q], state[o + 1] - state[q + 1]];
        let wd = [w[o] - w[q], w[o + 1] - w[q + 1]];
        let s = delta[0] * delta[0] + delta[1] * delta[1];
        let (_, _, d2, clamped) = log_barrier(s, *d_min);
        let d3 = if clamped { 0.0 } else { -2.0 / (s * s * s) };
        let dw = delta[0] * wd[0] + delta[1] * wd[1];
        for a in 0..2 {
            for c in 0..2 {
                let mut h = 8.0 * d3 * delta[a] * delta[c] * dw + 4.0 * d2 * (delta[a] * wd[c] + delta[c] * wd[a]);
                if a == c {
                    h += 4.0 * d2 * dw;
                }
                out.push((o + a, o + c, h));
                out.push((q + a, q + c, h));
                out.push((o + a, q + c, -h));
                out.push((q + a, o + c, -h));
            }
        }
    }
    out
}

/// Per-player weight vectors `θ = (θ¹, …, θᴺ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostParameters {
    pub weights: Vec<Vec<f64>>,
}

/// Admissible parameter set: nonnegative weights, an effort floor, and
/// optionally per-player normalization to the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub effort_floor: f64,
    pub normalized: bool,
}

impl Default for ParameterDomain {
    fn default() -> Self {
        Self {
            effort_floor: DEFAULT_EFFORT_FLOOR,
            normalized: true,
        }
    }
}

impl CostParameters {
    pub fn new(weights: Vec<Vec<f64>>) -> Self {
        Self { weights }
    }

    /// `1/kⁱ` for every basis of every player.
    pub fn uniform(game: &GameDefinition) -> Self {
        Self {
            weights: game
                .players
                .iter()
                .map(|p| vec![1.0 / p.bases.len() as f64; p.bases.len()])
                .collect(),
        }
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn num_players(&self) -> usize {
        self.weights.len()
    }

    /// Rescales every player's weights to sum to one.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for (i, w) in out.weights.iter_mut().enumerate() {
            let s: f64 = w.iter().sum();
            if s <= 0.0 || !s.is_finite() {
                return Err(GameError::ParameterDomain(format!(
                    "player {i} weights sum to {s}; cannot normalize"
                )));
            }
            w.iter_mut().for_each(|v| *v /= s);
        }
        Ok(out)
    }

    pub fn check_shape(&self, game: &GameDefinition) -> Result<()> {
        check_len("parameter player count", game.num_players(), self.weights.len())?;
        for (p, w) in game.players.iter().zip(&self.weights) {
            check_len("player weight vector", p.bases.len(), w.len())?;
        }
        Ok(())
    }

    pub fn validate(&self, game: &GameDefinition, domain: &ParameterDomain) -> Result<()> {
        self.check_shape(game)?;
        for (i, (p, w)) in game.players.iter().zip(&self.weights).enumerate() {
            for (j, (b, v)) in p.bases.iter().zip(w).enumerate() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(GameError::ParameterDomain(format!(
                        "player {i} weight {j} ({}) is {v}; weights must be nonnegative",
                        b.name()
                    )));
                }
                if b.is_control_effort() && *v < domain.effort_floor {
                    return Err(GameError::ParameterDomain(format!(
                        "player {i} control weight {j} ({}) is {v}, below the floor {}",
                        b.name(),
                        domain.effort_floor
                    )));
                }
            }
            if domain.normalized {
                let s: f64 = w.iter().sum();
                if (s - 1.0).abs() > 1e-8 {
                    return Err(GameError::ParameterDomain(format!(
                        "player {i} weights sum to {s}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_player(game: &GameDefinition, traj: &Trajectory, player: usize) -> Result<()> {
    game.check_trajectory(traj)?;
    if player >= game.num_players() {
        return Err(GameError::Config(format!(
            "player index {player} out of range for {} players",
            game.num_players()
        )));
    }
    Ok(())
}

fn check_weights(game: &GameDefinition, weights: &[f64], player: usize) -> Result<()> {
    check_len("player weight vector", game.players[player].bases.len(), weights.len())?;
    if let Some((j, v)) = weights.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(GameError::ParameterDomain(format!(
            "player {player} weight {j} is {v}; weights must be nonnegative"
        )));
    }
    Ok(())
}

/// Per-basis totals `Σ_t φ_j` plus whether any proximity term was clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTotals {
    pub totals: Vec<f64>,
    pub clamped: bool,
}

pub fn eval_basis(game: &GameDefinition, traj: &Trajectory, player: usize) -> Result<BasisTotals> {
    check_player(game, traj, player)?;
    let bases = &game.players[player].bases;
    let mut totals = vec![0.0; bases.len()];
    let mut clamped = false;
    for t in 0..game.horizon {
        for (j, b) in bases.iter().enumerate() {
            let term = basis_term(game, b, player, t, &traj.states[t], &traj.inputs[t]);
            totals[j] += term.value;
            clamped |= term.clamped;
        }
    }
    Ok(BasisTotals { totals, clamped })
}

/// `Jⁱ = θⁱ · eval_basis`.
pub fn total_cost(game: &GameDefinition, traj: &Trajectory, weights: &[f64], player: usize) -> Result<f64> {
    check_player(game, traj, player)?;
    check_weights(game, weights, player)?;
    let totals = eval_basis(game, traj, player)?;
    Ok(weights.iter().zip(&totals.totals).map(|(w, v)| w * v).sum())
}

/// `∇_{x_t} gⁱ_t` (length `n`) and `∇_{uⁱ_t} gⁱ_t` for every step.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradients {
    pub state: Vec<Vec<f64>>,
    pub input: Vec<[f64; INPUT_DIM]>,
    pub clamped: bool,
}

pub fn cost_gradients(
    game: &GameDefinition,
    traj: &Trajectory,
    weights: &[f64],
    player: usize,
) -> Result<CostGradients> {
    check_player(game, traj, player)?;
    check_weights(game, weights, player)?;
    let n = game.state_dim();
    let bases = &game.players[player].bases;
    let mut out = CostGradients {
        state: vec![vec![0.0; n]; game.horizon],
        input: vec![[0.0; INPUT_DIM]; game.horizon],
        clamped: false,
    };
    for t in 0..game.horizon {
        for (b, w) in bases.iter().zip(weights) {
            let term = basis_term(game, b, player, t, &traj.states[t], &traj.inputs[t]);
            for (k, g) in term.grad_x {
                out.state[t][k] += w * g;
            }
            for c in 0..INPUT_DIM {
                out.input[t][c] += w * term.grad_u[c];
            }
            out.clamped |= term.clamped;
        }
    }
    Ok(out)
}
