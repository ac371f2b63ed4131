use olne_nlp::{
    check_gradient, solve, ConstraintMap, NlpProblem, ObjectiveEval, ObjectiveMap, SolveStatus, SolverConfig,
    SparseMatrix,
};
use proptest::prelude::*;

/// ½ Rosenbrock on the unit circle.
struct RosenbrockCircle;

impl NlpProblem for RosenbrockCircle {
    fn dim(&self) -> usize {
        2
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let r = [1.0 - z[0], 10.0 * (z[1] - z[0] * z[0])];
        let mut j = SparseMatrix::new(2, 2);
        j.push(0, 0, -1.0);
        j.push(1, 0, -20.0 * z[0]);
        j.push(1, 1, 10.0);
        ObjectiveEval::least_squares(&r, j)
    }
    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        vec![z[0] * z[0] + z[1] * z[1] - 1.0]
    }
    fn constraint_jacobian(&self, z: &[f64]) -> SparseMatrix {
        let mut j = SparseMatrix::new(1, 2);
        j.push(0, 0, 2.0 * z[0]);
        j.push(0, 1, 2.0 * z[1]);
        j
    }
}

fn rosenbrock(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

#[test]
fn rosenbrock_on_circle_matches_grid_oracle() {
    let samples = 1_000_000;
    let (mut best, mut best_angle) = (f64::INFINITY, 0.0);
    for k in 0..samples {
        let a = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
        let v = rosenbrock(a.cos(), a.sin());
        if v < best {
            best = v;
            best_angle = a;
        }
    }
    let oracle = [best_angle.cos(), best_angle.sin()];

    let sol = solve(&RosenbrockCircle, &[0.5, 0.5], &SolverConfig::default());
    assert!(sol.converged(), "{sol:?}");
    assert!((sol.z[0] - oracle[0]).abs() < 1e-4, "{:?} vs {:?}", sol.z, oracle);
    assert!((sol.z[1] - oracle[1]).abs() < 1e-4, "{:?} vs {:?}", sol.z, oracle);
    let c = RosenbrockCircle.constraints(&sol.z);
    assert!(c[0].abs() <= 1e-6);
}

#[test]
fn rosenbrock_derivatives_audit() {
    for p in [[0.3, -0.2], [1.1, 0.7], [-0.5, 2.0]] {
        assert!(check_gradient(&ObjectiveMap(&RosenbrockCircle), &p) < 1e-6);
        assert!(check_gradient(&ConstraintMap(&RosenbrockCircle), &p) < 1e-6);
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let a = solve(&RosenbrockCircle, &[0.5, 0.5], &SolverConfig::default());
    let b = solve(&RosenbrockCircle, &[0.5, 0.5], &SolverConfig::default());
    assert_eq!(a.z, b.z);
    assert_eq!(a.multipliers, b.multipliers);
    assert_eq!(a.inner_iterations, b.inner_iterations);
}

#[test]
fn iteration_cap_reports_max_iterations() {
    let config = SolverConfig {
        max_outer: 1,
        max_inner: 1,
        ..SolverConfig::default()
    };
    let sol = solve(&RosenbrockCircle, &[0.5, 0.5], &config);
    assert_eq!(sol.status, SolveStatus::MaxIterations);
}

/// Sum of sqrt(z) shifted: evaluations turn NaN for negative z.
struct SqrtTrap;

impl NlpProblem for SqrtTrap {
    fn dim(&self) -> usize {
        1
    }
    fn num_constraints(&self) -> usize {
        0
    }
    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let mut j = SparseMatrix::new(1, 1);
        j.push(0, 0, 0.5 / z[0].sqrt());
        ObjectiveEval::least_squares(&[z[0].sqrt() + 10.0], j)
    }
    fn constraints(&self, _z: &[f64]) -> Vec<f64> {
        Vec::new()
    }
    fn constraint_jacobian(&self, _z: &[f64]) -> SparseMatrix {
        SparseMatrix::new(0, 1)
    }
}

#[test]
fn repeated_non_finite_steps_diverge() {
    let sol = solve(&SqrtTrap, &[1.0], &SolverConfig::default());
    assert_eq!(sol.status, SolveStatus::Diverged);
    let bad = sol.diverged_at.expect("offending iterate");
    assert!(bad[0] < 0.0);
    assert!(sol.z[0] >= 0.0 && sol.z[0].is_finite());
}

/// min ½|z - target|² s.t. A z = b with a random banded A.
struct LinearProjection {
    target: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl NlpProblem for LinearProjection {
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn num_constraints(&self) -> usize {
        self.rows.len()
    }
    fn objective(&self, z: &[f64]) -> ObjectiveEval {
        let r: Vec<f64> = z.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let mut j = SparseMatrix::new(r.len(), r.len());
        for i in 0..r.len() {
            j.push(i, i, 1.0);
        }
        ObjectiveEval::least_squares(&r, j)
    }
    fn constraints(&self, z: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| row.iter().map(|(c, v)| v * z[*c]).sum::<f64>() - b)
            .collect()
    }
    fn constraint_jacobian(&self, _z: &[f64]) -> SparseMatrix {
        let mut j = SparseMatrix::new(self.rows.len(), self.target.len());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                j.push(r, c, v);
            }
        }
        j
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_solutions_are_feasible(
        target in prop::collection::vec(-5.0f64..5.0, 8),
        coeffs in prop::collection::vec(0.5f64..2.0, 6),
        rhs in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        // three independent banded rows over eight variables
        let rows = (0..3)
            .map(|r| vec![(2 * r, coeffs[2 * r]), (2 * r + 1, -coeffs[2 * r + 1]), (2 * r + 2, 1.0)])
            .collect();
        let problem = LinearProjection { target, rows, rhs };
        let sol = solve(&problem, &[0.0; 8], &SolverConfig::default());
        prop_assert!(sol.converged());
        let c = problem.constraints(&sol.z);
        prop_assert!(c.iter().all(|v| v.abs() <= 1e-6));
        prop_assert!(sol.stationarity <= 1e-6);
    }
}
