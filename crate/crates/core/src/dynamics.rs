//! Discrete-time multi-player dynamics.
//!
//! Every player owns a 4-dimensional state and a 2-dimensional input. The
//! global state concatenates player states, `x = (x¹, …, xᴺ)`, and the joint
//! input concatenates `u = (u¹, …, uᴺ)`. Players evolve independently, so all
//! Jacobians are block diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, GameError, Result};
use crate::objectives::CostBasis;

pub const STATE_DIM: usize = 4;
pub const INPUT_DIM: usize = 2;

pub type PlayerState = [f64; STATE_DIM];
pub type PlayerInput = [f64; INPUT_DIM];
pub type StateJacobian = [[f64; STATE_DIM]; STATE_DIM];
pub type InputJacobian = [[f64; INPUT_DIM]; STATE_DIM];

/// Per-player explicit Euler model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsModel {
    /// State `(px, py, ψ, v)`, input `(ω, a)`.
    Unicycle,
    /// State `(px, py, vx, vy)`, input `(ax, ay)`.
    DoubleIntegrator,
}

impl DynamicsModel {
    pub fn step(&self, x: &PlayerState, u: &PlayerInput, dt: f64) -> PlayerState {
        match self {
            Self::Unicycle => {
                let [px, py, psi, v] = *x;
                [
                    px + dt * v * psi.cos(),
                    py + dt * v * psi.sin(),
                    psi + dt * u[0],
                    v + dt * u[1],
                ]
            }
            Self::DoubleIntegrator => {
                let [px, py, vx, vy] = *x;
                [px + dt * vx, py + dt * vy, vx + dt * u[0], vy + dt * u[1]]
            }
        }
    }

    /// `(∂f/∂x, ∂f/∂u)` of one player's update.
    pub fn jacobians(&self, x: &PlayerState, dt: f64) -> (StateJacobian, InputJacobian) {
        let mut a = [[0.0; STATE_DIM]; STATE_DIM];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let mut b = [[0.0; INPUT_DIM]; STATE_DIM];
        b[2][0] = dt;
        b[3][1] = dt;
        match self {
            Self::Unicycle => {
                let (psi, v) = (x[2], x[3]);
                let (s, c) = psi.sin_cos();
                a[0][2] = -dt * v * s;
                a[0][3] = dt * c;
                a[1][2] = dt * v * c;
                a[1][3] = dt * s;
            }
            Self::DoubleIntegrator => {
                a[0][2] = dt;
                a[1][3] = dt;
            }
        }
        (a, b)
    }

    /// `Σ_k w_k ∇²_xx f_k` for one player; `f` is affine in `u` for both models.
    pub fn weighted_state_hessian(&self, x: &PlayerState, dt: f64, w: &[f64]) -> StateJacobian {
        let mut h = [[0.0; STATE_DIM]; STATE_DIM];
        if let Self::Unicycle = self {
            let (psi, v) = (x[2], x[3]);
            let (s, c) = psi.sin_cos();
            h[2][2] = -dt * v * (w[0] * c + w[1] * s);
            let cross = dt * (-w[0] * s + w[1] * c);
            h[2][3] = cross;
            h[3][2] = cross;
        }
        h
    }

    /// Derivatives of `λᵀ A(x) w` for one player: the state Hessian and the
    /// mixed block `∂(A(x) w)_r / ∂x_k`, indexed `[k][r]`.
    pub fn costate_curvature(&self, x: &PlayerState, dt: f64, lam: &[f64], w: &[f64]) -> (StateJacobian, StateJacobian) {
        let mut xx = [[0.0; STATE_DIM]; STATE_DIM];
        let mut cross = [[0.0; STATE_DIM]; STATE_DIM];
        if let Self::Unicycle = self {
            let (psi, v) = (x[2], x[3]);
            let (s, c) = psi.sin_cos();
            cross[2][0] = -dt * v * c * w[2] - dt * s * w[3];
            cross[3][0] = -dt * s * w[2];
            cross[2][1] = -dt * v * s * w[2] + dt * c * w[3];
            cross[3][1] = dt * c * w[2];
            xx[2][2] = lam[0] * (dt * v * s * w[2] - dt * c * w[3]) + lam[1] * (-dt * v * c * w[2] - dt * s * w[3]);
            let pv = -dt * w[2] * (lam[0] * c + lam[1] * s);
            xx[2][3] = pv;
            xx[3][2] = pv;
        }
        (xx, cross)
    }

    /// State index holding an angle, if any.
    pub fn angle_index(&self) -> Option<usize> {
        match self {
            Self::Unicycle => Some(2),
            Self::DoubleIntegrator => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSpec {
    #[serde(default)]
    pub name: String,
    pub dynamics: DynamicsModel,
    pub initial_state: PlayerState,
    /// Ordered cost bases; the player's weight vector has one entry per basis.
    pub bases: Vec<CostBasis>,
}

/// Players, horizon, time step, dynamics and cost-basis structure of a game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDefinition {
    pub horizon: usize,
    pub dt: f64,
    pub players: Vec<PlayerSpec>,
}

impl GameDefinition {
    pub fn validate(&self) -> Result<()> {
        if self.players.is_empty() {
            return Err(GameError::Config("a game needs at least one player".into()));
        }
        if self.horizon < 2 {
            return Err(GameError::Config(format!("horizon must be at least 2, got {}", self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(GameError::Config(format!("time step must be positive, got {}", self.dt)));
        }
        for (i, p) in self.players.iter().enumerate() {
            if p.bases.is_empty() {
                return Err(GameError::Config(format!("player {i} has no cost bases")));
            }
            if p.initial_state.iter().any(|v| !v.is_finite()) {
                return Err(GameError::Config(format!("player {i} has a non-finite initial state")));
            }
        }
        Ok(())
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    /// Global state dimension `n = 4N`.
    pub fn state_dim(&self) -> usize {
        STATE_DIM * self.players.len()
    }

    /// Joint input dimension `2N`.
    pub fn input_dim(&self) -> usize {
        INPUT_DIM * self.players.len()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.players.iter().flat_map(|p| p.initial_state).collect()
    }

    pub fn basis_counts(&self) -> Vec<usize> {
        self.players.iter().map(|p| p.bases.len()).collect()
    }

    /// One explicit Euler step of the joint dynamics.
    pub fn step(&self, state: &[f64], inputs: &[f64]) -> Result<Vec<f64>> {
        check_len("global state", self.state_dim(), state.len())?;
        check_len("joint input", self.input_dim(), inputs.len())?;
        Ok(self.step_unchecked(state, inputs))
    }

    pub(crate) fn step_unchecked(&self, state: &[f64], inputs: &[f64]) -> Vec<f64> {
        let mut next = Vec::with_capacity(state.len());
        for (i, p) in self.players.iter().enumerate() {
            next.extend(p.dynamics.step(&player_state(state, i), &player_input(inputs, i), self.dt));
        }
        next
    }

    /// Global `(∂f/∂x, ∂f/∂u)` as dense row-major matrices (`n×n`, `n×2N`).
    pub fn jacobians(&self, state: &[f64], inputs: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        check_len("global state", self.state_dim(), state.len())?;
        check_len("joint input", self.input_dim(), inputs.len())?;
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut fx = vec![vec![0.0; n]; n];
        let mut fu = vec![vec![0.0; m]; n];
        for (i, p) in self.players.iter().enumerate() {
            let (a, b) = p.dynamics.jacobians(&player_state(state, i), self.dt);
            for r in 0..STATE_DIM {
                for c in 0..STATE_DIM {
                    fx[STATE_DIM * i + r][STATE_DIM * i + c] = a[r][c];
                }
                for c in 0..INPUT_DIM {
                    fu[STATE_DIM * i + r][INPUT_DIM * i + c] = b[r][c];
                }
            }
        }
        Ok((fx, fu))
    }

    /// Simulates the joint input sequence forward from `x1`.
    pub fn rollout(&self, x1: &[f64], inputs: &[Vec<f64>]) -> Result<Trajectory> {
        check_len("initial state", self.state_dim(), x1.len())?;
        check_len("input sequence", self.horizon, inputs.len())?;
        for u in inputs {
            check_len("joint input", self.input_dim(), u.len())?;
        }
        let mut states = Vec::with_capacity(self.horizon);
        states.push(x1.to_vec());
        for u in &inputs[..self.horizon - 1] {
            let next = self.step_unchecked(states.last().unwrap(), u);
            states.push(next);
        }
        Ok(Trajectory {
            states,
            inputs: inputs.to_vec(),
            costates: None,
            feasible: true,
        })
    }

    /// Rollout of all-zero inputs from the game's initial state.
    pub fn zero_input_rollout(&self) -> Trajectory {
        let zeros = vec![vec![0.0; self.input_dim()]; self.horizon];
        self.rollout(&self.initial_state(), &zeros)
            .expect("dimensions come from the game itself")
    }

    /// Stacked defects `x_{t+1} − f(x_t, u_t)`, length `(T−1)·n`.
    pub fn dynamics_residual(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        self.check_trajectory(traj)?;
        let mut out = Vec::with_capacity((self.horizon - 1) * self.state_dim());
        for t in 0..self.horizon - 1 {
            let pred = self.step_unchecked(&traj.states[t], &traj.inputs[t]);
            out.extend(traj.states[t + 1].iter().zip(&pred).map(|(a, b)| a - b));
        }
        Ok(out)
    }

    pub fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        check_len("state sequence", self.horizon, traj.states.len())?;
        check_len("input sequence", self.horizon, traj.inputs.len())?;
        for x in &traj.states {
            check_len("global state", self.state_dim(), x.len())?;
        }
        for u in &traj.inputs {
            check_len("joint input", self.input_dim(), u.len())?;
        }
        Ok(())
    }
}

#[inline]
pub fn player_state(state: &[f64], player: usize) -> PlayerState {
    let s = &state[STATE_DIM * player..STATE_DIM * (player + 1)];
    [s[0], s[1], s[2], s[3]]
}

#[inline]
pub fn player_input(inputs: &[f64], player: usize) -> PlayerInput {
    [inputs[INPUT_DIM * player], inputs[INPUT_DIM * player + 1]]
}

/// States, inputs and (optionally) per-player costates over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `T × n`
    pub states: Vec<Vec<f64>>,
    /// `T × 2N`
    pub inputs: Vec<Vec<f64>>,
    /// `[player][t][n]` for `t` in `0..T−1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costates: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub feasible: bool,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn position(&self, player: usize, t: usize) -> [f64; 2] {
        let x = &self.states[t];
        [x[STATE_DIM * player], x[STATE_DIM * player + 1]]
    }

    pub fn with_costates(mut self, costates: Vec<Vec<Vec<f64>>>) -> Self {
        self.costates = Some(costates);
        self
    }
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
