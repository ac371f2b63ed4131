//! Equality-constrained nonlinear programming for trajectory-scale problems.
//!
//! The solver targets smooth programs whose objective is (mostly) a sum of
//! squares and whose constraints have sparse, time-banded Jacobians: dynamics
//! defects, stacked first-order optimality conditions and simplex
//! normalizations. See [`solve`].

pub mod gradcheck;
pub mod skyline;
pub mod solver;
pub mod sparse;

pub use gradcheck::{check_gradient, ConstraintMap, DifferentiableMap, ObjectiveMap};
pub use skyline::{NotPositiveDefinite, Profile, SkylineCholesky, SkylineMatrix};
pub use solver::{
    solve, solve_with_multipliers, Curvature, NlpProblem, NlpSolution, ObjectiveEval, SolveStatus, SolverConfig,
};
pub use sparse::{Csr, SparseMatrix};
