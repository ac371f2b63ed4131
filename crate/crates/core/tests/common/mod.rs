//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector4};
use olne::{CostBasis, CostParameters, DynamicsModel, GameDefinition, PlayerSpec, Trajectory};
use rand::Rng;

/// One double integrator regulated to the origin: goal cost on every step
/// plus input effort.
pub fn lq_game(horizon: usize, dt: f64, x0: [f64; 4]) -> GameDefinition {
    GameDefinition {
        horizon,
        dt,
        players: vec![PlayerSpec {
            name: "lq".into(),
            dynamics: DynamicsModel::DoubleIntegrator,
            initial_state: x0,
            bases: vec![
                CostBasis::Goal {
                    position: [0.0, 0.0],
                    t_goal: horizon - 1,
                },
                CostBasis::InputEffort,
            ],
        }],
    }
}

/// Optimal states of `Σ_t q‖p_t‖² + r‖u_t‖²` over `x_0 … x_{T−1}` by the
/// backward Riccati recursion.
pub fn riccati_states(game: &GameDefinition, q: f64, r: f64) -> Vec<Vector4<f64>> {
    let dt = game.dt;
    let a = Matrix4::new(
        1.0, 0.0, dt, 0.0, //
        0.0, 1.0, 0.0, dt, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    let b = Matrix4x2::new(0.0, 0.0, 0.0, 0.0, dt, 0.0, 0.0, dt);
    let qm = Matrix4::from_diagonal(&Vector4::new(q, q, 0.0, 0.0));
    let rm = Matrix2::identity() * r;
    let horizon = game.horizon;
    let mut p = qm;
    let mut gains = vec![Matrix2x4::zeros(); horizon];
    for t in (0..horizon - 1).rev() {
        let k = (rm + b.transpose() * p * b).try_inverse().expect("R + BᵀPB invertible") * b.transpose() * p * a;
        p = qm + a.transpose() * p * (a - b * k);
        p = 0.5 * (p + p.transpose());
        gains[t] = k;
    }
    let s = game.players[0].initial_state;
    let mut x = Vector4::new(s[0], s[1], s[2], s[3]);
    let mut out = vec![x];
    for k in gains.iter().take(horizon - 1) {
        x = (a - b * k) * x;
        out.push(x);
    }
    out
}

pub fn max_state_gap(traj: &Trajectory, oracle: &[Vector4<f64>]) -> f64 {
    traj.states
        .iter()
        .zip(oracle)
        .flat_map(|(s, o)| s.iter().zip(o.iter()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Largest per-step position distance over all players.
pub fn max_position_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    let players = a.states[0].len() / olne::STATE_DIM;
    let mut worst = 0.0f64;
    for t in 0..a.horizon() {
        for p in 0..players {
            let (x, y) = (a.position(p, t), b.position(p, t));
            worst = worst.max((x[0] - y[0]).hypot(x[1] - y[1]));
        }
    }
    worst
}

pub fn random_direction<R: Rng>(rng: &mut R, horizon: usize) -> Vec<Vec<f64>> {
    (0..horizon)
        .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn theta1(w: &[f64]) -> CostParameters {
    CostParameters::new(vec![w.to_vec()])
}
