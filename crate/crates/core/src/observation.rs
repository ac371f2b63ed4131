//! Additive white Gaussian observations of player states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{GameDefinition, Trajectory, STATE_DIM};
use crate::error::{check_len, GameError, Result};
use crate::forward::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Every state channel.
    Full,
    /// Position and heading; the last state channel is hidden.
    Partial,
}

impl ObservationKind {
    pub fn channels_per_player(&self) -> usize {
        match self {
            Self::Full => STATE_DIM,
            Self::Partial => STATE_DIM - 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Partial => "partial",
        }
    }
}

impl std::str::FromStr for ObservationKind {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "partial" => Ok(Self::Partial),
            other => Err(GameError::Config(format!(
                "unknown observation kind `{other}` (expected full or partial)"
            ))),
        }
    }
}

/// `y_t = h(x_t) + n_t` with `n_t ~ N(0, σ² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub kind: ObservationKind,
    pub sigma: f64,
}

/// One observed scalar: the global state index it measures and whether its
/// residual is an angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channel {
    pub state_index: usize,
    pub angle: bool,
}

impl ObservationModel {
    pub fn new(kind: ObservationKind, sigma: f64) -> Result<Self> {
        let m = Self { kind, sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(GameError::Config(format!(
                "noise standard deviation must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn dim(&self, game: &GameDefinition) -> usize {
        self.kind.channels_per_player() * game.num_players()
    }

    pub fn channels(&self, game: &GameDefinition) -> Vec<Channel> {
        let mut out = Vec::with_capacity(self.dim(game));
        for (i, p) in game.players.iter().enumerate() {
            let angle = p.dynamics.angle_index();
            for c in 0..self.kind.channels_per_player() {
                out.push(Channel {
                    state_index: STATE_DIM * i + c,
                    angle: angle == Some(c),
                });
            }
        }
        out
    }

    /// Noise-free `h(x)`.
    pub fn expected(&self, game: &GameDefinition, state: &[f64]) -> Vec<f64> {
        self.channels(game).iter().map(|c| state[c.state_index]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub model: ObservationModel,
    pub seed: u64,
    /// `T × dim`
    pub y: Vec<Vec<f64>>,
}

impl ObservationSequence {
    pub fn check(&self, game: &GameDefinition) -> Result<()> {
        self.model.validate()?;
        check_len("observation sequence", game.horizon, self.y.len())?;
        let dim = self.model.dim(game);
        for y in &self.y {
            check_len("observation", dim, y.len())?;
        }
        Ok(())
    }
}

/// Generator for step `t`: the stream of a ChaCha8 keyed by `seed` is set to
/// `t`, so every time step draws from its own counter range.
fn step_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

pub fn observe(
    game: &GameDefinition,
    traj: &Trajectory,
    model: &ObservationModel,
    seed: u64,
) -> Result<ObservationSequence> {
    model.validate()?;
    game.check_trajectory(traj)?;
    let channels = model.channels(game);
    let y = traj
        .states
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let mut rng = step_rng(seed, t);
            channels
                .iter()
                .map(|c| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    x[c.state_index] + model.sigma * n
                })
                .collect()
        })
        .collect();
    Ok(ObservationSequence {
        model: *model,
        seed,
        y,
    })
}

/// `y_t − h(x_t)` for every step, angle channels wrapped to `(−π, π]`.
pub fn observation_residuals(game: &GameDefinition, obs: &ObservationSequence, states: &[Vec<f64>]) -> Vec<f64> {
    let channels = obs.model.channels(game);
    let mut out = Vec::with_capacity(channels.len() * states.len());
    for (y, x) in obs.y.iter().zip(states) {
        for (c, yc) in channels.iter().zip(y) {
            let r = yc - x[c.state_index];
            out.push(if c.angle { wrap_angle(r) } else { r });
        }
    }
    out
}

/// `Σ_t ‖y_t − h(x_t)‖²` (constants of the Gaussian density dropped).
pub fn neg_log_likelihood(game: &GameDefinition, obs: &ObservationSequence, traj: &Trajectory) -> Result<f64> {
    obs.check(game)?;
    game.check_trajectory(traj)?;
    Ok(observation_residuals(game, obs, &traj.states).iter().map(|r| r * r).sum())
}

/// Gradient of `neg_log_likelihood` w.r.t. the states, `T × n`.
pub fn neg_log_likelihood_gradient(
    game: &GameDefinition,
    obs: &ObservationSequence,
    traj: &Trajectory,
) -> Result<Vec<Vec<f64>>> {
    obs.check(game)?;
    game.check_trajectory(traj)?;
    let channels = obs.model.channels(game);
    let r = observation_residuals(game, obs, &traj.states);
    let mut g = vec![vec![0.0; game.state_dim()]; game.horizon];
    for (t, gt) in g.iter_mut().enumerate() {
        for (k, c) in channels.iter().enumerate() {
            gt[c.state_index] -= 2.0 * r[t * channels.len() + k];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsModel, PlayerSpec};
    use crate::objectives::CostBasis;

    fn game(horizon: usize) -> GameDefinition {
        GameDefinition {
            horizon,
            dt: 0.5,
            players: vec![
                PlayerSpec {
                    name: String::new(),
                    dynamics: DynamicsModel::Unicycle,
                    initial_state: [0.0, 1.0, 0.3, 1.0],
                    bases: vec![CostBasis::Speed],
                },
                PlayerSpec {
                    name: String::new(),
                    dynamics: DynamicsModel::Unicycle,
                    initial_state: [2.0, -1.0, -1.2, 0.5],
                    bases: vec![CostBasis::Speed],
                },
            ],
        }
    }

    #[test]
    fn noiseless_observations_are_exact() {
        let g = game(6);
        let traj = g.zero_input_rollout();
        for kind in [ObservationKind::Full, ObservationKind::Partial] {
            let obs = observe(&g, &traj, &ObservationModel::new(kind, 0.0).unwrap(), 3).unwrap();
            for (y, x) in obs.y.iter().zip(&traj.states) {
                assert_eq!(y, &obs.model.expected(&g, x));
            }
            assert_eq!(neg_log_likelihood(&g, &obs, &traj).unwrap(), 0.0);
        }
    }

    #[test]
    fn same_seed_same_noise() {
        let g = game(6);
        let traj = g.zero_input_rollout();
        let m = ObservationModel::new(ObservationKind::Partial, 0.2).unwrap();
        assert_eq!(observe(&g, &traj, &m, 11).unwrap(), observe(&g, &traj, &m, 11).unwrap());
        assert_ne!(observe(&g, &traj, &m, 11).unwrap().y, observe(&g, &traj, &m, 12).unwrap().y);
    }

    #[test]
    fn partial_drops_speed() {
        let g = game(3);
        let m = ObservationModel::new(ObservationKind::Partial, 0.0).unwrap();
        assert_eq!(m.dim(&g), 6);
        let idx: Vec<usize> = m.channels(&g).iter().map(|c| c.state_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 4, 5, 6]);
    }

    #[test]
    fn unit_residual() {
        let mut g = GameDefinition {
            horizon: 2,
            players: vec![game(2).players[0].clone()],
            ..game(2)
        };
        g.players[0].initial_state = [0.0; STATE_DIM];
        let traj = g.zero_input_rollout();
        let mut obs = observe(&g, &traj, &ObservationModel::new(ObservationKind::Full, 0.0).unwrap(), 0).unwrap();
        obs.y[1][0] += 1.0;
        assert_eq!(neg_log_likelihood(&g, &obs, &traj).unwrap(), 1.0);
    }

    #[test]
    fn heading_residual_wraps() {
        let mut g = game(2);
        g.players.truncate(1);
        g.players[0].initial_state = [0.0, 0.0, 3.1, 0.0];
        let traj = g.zero_input_rollout();
        let mut obs = observe(&g, &traj, &ObservationModel::new(ObservationKind::Full, 0.0).unwrap(), 0).unwrap();
        obs.y[0][2] = -3.1;
        let nll = neg_log_likelihood(&g, &obs, &traj).unwrap();
        let wrapped = 2.0 * std::f64::consts::PI - 6.2;
        assert!((wrapped - 0.0832).abs() < 1e-4);
        assert!((nll - wrapped * wrapped).abs() < 1e-12);
        assert!((nll - 6.9e-3).abs() < 1e-4);
    }

    #[test]
    fn sigma_must_be_nonnegative() {
        assert!(ObservationModel::new(ObservationKind::Full, -0.1).is_err());
        assert!(ObservationModel::new(ObservationKind::Full, f64::NAN).is_err());
    }
    #[test]
    fn noise_moments() {
        let mut g = game(10_000);
        g.players.truncate(1);
        g.players[0].initial_state = [1.0, -2.0, 0.4, 0.0];
        let traj = g.zero_input_rollout();
        let obs = observe(&g, &traj, &ObservationModel::new(ObservationKind::Full, 0.1).unwrap(), 42).unwrap();
        for c in 0..STATE_DIM {
            let e: Vec<f64> = obs.y.iter().map(|y| y[c] - traj.states[0][c]).collect();
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
            let sd = var.sqrt();
            assert!((0.097..=0.103).contains(&sd), "channel {c}: {sd}");
            assert!(mean.abs() < 5e-3);
        }
    }

    #[test]
    fn likelihood_ignores_inputs() {
        let g = game(5);
        let traj = g.zero_input_rollout();
        let obs = observe(&g, &traj, &ObservationModel::new(ObservationKind::Full, 0.3).unwrap(), 5).unwrap();
        let mut other = traj.clone();
        for u in &mut other.inputs {
            u.iter_mut().for_each(|v| *v += 0.7);
        }
        assert_eq!(
            neg_log_likelihood(&g, &obs, &traj).unwrap(),
            neg_log_likelihood(&g, &obs, &other).unwrap()
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = game(4);
        let traj = g.zero_input_rollout();
        let obs = observe(&g, &traj, &ObservationModel::new(ObservationKind::Partial, 0.4).unwrap(), 9).unwrap();
        let grad = neg_log_likelihood_gradient(&g, &obs, &traj).unwrap();
        let h = 1e-6;
        for t in 0..g.horizon {
            for k in 0..g.state_dim() {
                let mut p = traj.clone();
                let mut m = traj.clone();
                p.states[t][k] += h;
                m.states[t][k] -= h;
                let fd = (neg_log_likelihood(&g, &obs, &p).unwrap() - neg_log_likelihood(&g, &obs, &m).unwrap()) / (2.0 * h);
                assert!((fd - grad[t][k]).abs() < 1e-5, "t={t} k={k}: {fd} vs {}", grad[t][k]);
            }
        }
    }
}
