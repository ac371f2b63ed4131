//! Open-loop Nash equilibrium games: forward solves, noisy observations and
//! inverse estimation of cost weights.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod kkt;
pub mod objectives;
pub mod observation;
pub mod inverse;

pub use dynamics::{DynamicsModel, GameDefinition, PlayerSpec, Trajectory, INPUT_DIM, STATE_DIM};
pub use error::{GameError, Result};
pub use objectives::{
    cost_gradients, eval_basis, total_cost, BasisTerm, BasisTotals, CostBasis, CostGradients, CostParameters,
    ParameterDomain,
};
pub use forward::{
    solve_forward, solve_olne_ibr, solve_olne_newton, unilateral_deviation_check, ForwardConfig, ForwardMethod,
    ForwardSolution, ForwardStatus,
};
pub use kkt::{assemble_kkt, KktBlocks, KktPoint, KktSystem, VariableLayout};
pub use observation::{neg_log_likelihood, observe, ObservationKind, ObservationModel, ObservationSequence};
pub use inverse::{
    predict, presolve, solve_inverse_baseline, solve_inverse_joint, EstimationMethod, EstimationResult,
    EstimationStatus, FailureKind, InverseConfig, Presolve,
};
