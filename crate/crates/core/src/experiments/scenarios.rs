//! Built-in scenarios. Initial states and ground-truth weights are
//! reconstructions; they are fixed here and stored in every scenario file.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsModel, GameDefinition, PlayerSpec};
use crate::error::{GameError, Result};
use crate::objectives::{default_t_goal, CostBasis, CostParameters, DEFAULT_D_MIN};

pub const TWO_PLAYER_CROSSING: &str = "two-player-crossing";
pub const FIVE_PLAYER_HIGHWAY: &str = "five-player-highway";
pub const SCENARIO_IDS: [&str; 2] = [TWO_PLAYER_CROSSING, FIVE_PLAYER_HIGHWAY];

/// A game together with the weights used to generate demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub game: GameDefinition,
    pub theta_true: CostParameters,
    #[serde(default)]
    pub reconstructed: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        self.theta_true.validate(&self.game, &Default::default())
    }
}

pub fn build_scenario(id: &str) -> Result<Scenario> {
    match id {
        TWO_PLAYER_CROSSING => Ok(two_player_crossing()),
        FIVE_PLAYER_HIGHWAY => Ok(five_player_highway()),
        other => Err(GameError::UnknownScenario(other.to_string())),
    }
}

fn crossing_bases(goal: [f64; 2], horizon: usize) -> Vec<CostBasis> {
    vec![
        CostBasis::Goal {
            position: goal,
            t_goal: default_t_goal(horizon),
        },
        CostBasis::Proximity { d_min: DEFAULT_D_MIN },
        CostBasis::Speed,
        CostBasis::YawRateEffort,
        CostBasis::AccelerationEffort,
    ]
}

/// Two unicycles whose goals are the point reflections of their starts, so
/// the straight paths intersect near the origin. Player 1 reaches the
/// crossing first.
pub fn two_player_crossing() -> Scenario {
    let horizon = 50;
    let starts = [[-4.0, 0.5, 0.0, 0.9], [0.5, -6.0, std::f64::consts::FRAC_PI_2, 0.3]];
    let players = starts
        .iter()
        .enumerate()
        .map(|(i, s)| PlayerSpec {
            name: format!("player-{}", i + 1),
            dynamics: DynamicsModel::Unicycle,
            initial_state: *s,
            bases: crossing_bases([-s[0], -s[1]], horizon),
        })
        .collect();
    Scenario {
        id: TWO_PLAYER_CROSSING.into(),
        game: GameDefinition {
            horizon,
            dt: 0.5,
            players,
        },
        theta_true: CostParameters::new(vec![
            vec![0.27, 0.08, 0.15, 0.25, 0.25],
            vec![0.32, 0.08, 0.1, 0.2, 0.3],
        ]),
        reconstructed: true,
    }
}

/// Five unicycles on a two-lane road (lanes at y = 0 and y = 3.5), each with
/// a target lane and preferred speed.
pub fn five_player_highway() -> Scenario {
    let horizon = 40;
    // (px, py, v, target lane, preferred speed)
    let cars = [
        (0.0, 0.0, 6.0, 3.5, 7.0),
        (12.0, 0.0, 4.0, 0.0, 4.0),
        (6.0, 3.5, 5.0, 3.5, 5.0),
        (-8.0, 3.5, 6.0, 3.5, 6.5),
        (24.0, 3.5, 5.0, 0.0, 5.0),
    ];
    let players = cars
        .iter()
        .enumerate()
        .map(|(i, &(px, py, v, lane_y, speed))| PlayerSpec {
            name: format!("car-{}", i + 1),
            dynamics: DynamicsModel::Unicycle,
            initial_state: [px, py, 0.0, v],
            bases: vec![
                CostBasis::LaneSpeed { lane_y, speed },
                CostBasis::Proximity { d_min: DEFAULT_D_MIN },
                CostBasis::Speed,
                CostBasis::YawRateEffort,
                CostBasis::AccelerationEffort,
            ],
        })
        .collect();
    let theta = vec![
        vec![0.4, 0.05, 0.02, 0.3, 0.23],
        vec![0.45, 0.04, 0.01, 0.25, 0.25],
        vec![0.35, 0.06, 0.03, 0.3, 0.26],
        vec![0.4, 0.05, 0.02, 0.28, 0.25],
        vec![0.5, 0.03, 0.02, 0.2, 0.25],
    ];
    Scenario {
        id: FIVE_PLAYER_HIGHWAY.into(),
        game: GameDefinition {
            horizon,
            dt: 0.25,
            players,
        },
        theta_true: CostParameters::new(theta),
        reconstructed: true,
    }
}
