//! Finite-difference audits of analytic derivatives.

use crate::solver::NlpProblem;
use crate::sparse::SparseMatrix;

/// A vector-valued map with an analytic Jacobian.
pub trait DifferentiableMap {
    fn input_dim(&self) -> usize;
    fn eval(&self, z: &[f64]) -> Vec<f64>;
    fn jacobian(&self, z: &[f64]) -> SparseMatrix;
}

/// Largest mismatch between the analytic Jacobian and central differences.
///
/// Coordinate `i` is perturbed by `1e-6 · max(1, |z_i|)`. Each entry's error
/// is `|J - J_fd| / max(1, |J|, |J_fd|)`, i.e. relative for entries above
/// one in magnitude and absolute below.
pub fn check_gradient<F: DifferentiableMap + ?Sized>(map: &F, point: &[f64]) -> f64 {
    let n = map.input_dim();
    assert_eq!(point.len(), n);
    let analytic = map.jacobian(point).to_dense();
    let mut worst = 0.0f64;
    let mut z = point.to_vec();
    for j in 0..n {
        let h = 1e-6 * point[j].abs().max(1.0);
        z[j] = point[j] + h;
        let plus = map.eval(&z);
        z[j] = point[j] - h;
        let minus = map.eval(&z);
        z[j] = point[j];
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            let fd = (p - m) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}

/// Objective value with its gradient as a 1×n Jacobian.
pub struct ObjectiveMap<'a, P: ?Sized>(pub &'a P);

impl<P: NlpProblem + ?Sized> DifferentiableMap for ObjectiveMap<'_, P> {
    fn input_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        vec![self.0.objective_value(z)]
    }
    fn jacobian(&self, z: &[f64]) -> SparseMatrix {
        let g = self.0.objective(z).gradient;
        let mut j = SparseMatrix::new(1, g.len());
        for (c, v) in g.into_iter().enumerate() {
            j.push(0, c, v);
        }
        j
    }
}

/// Constraint values with their Jacobian.
pub struct ConstraintMap<'a, P: ?Sized>(pub &'a P);

impl<P: NlpProblem + ?Sized> DifferentiableMap for ConstraintMap<'_, P> {
    fn input_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        self.0.constraints(z)
    }
    fn jacobian(&self, z: &[f64]) -> SparseMatrix {
        self.0.constraint_jacobian(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SquaredNorm;

    impl DifferentiableMap for SquaredNorm {
        fn input_dim(&self) -> usize {
            3
        }
        fn eval(&self, z: &[f64]) -> Vec<f64> {
            vec![z.iter().map(|v| v * v).sum()]
        }
        fn jacobian(&self, z: &[f64]) -> SparseMatrix {
            let mut j = SparseMatrix::new(1, 3);
            for (c, v) in z.iter().enumerate() {
                j.push(0, c, 2.0 * v);
            }
            j
        }
    }

    struct WrongSign;

    impl DifferentiableMap for WrongSign {
        fn input_dim(&self) -> usize {
            1
        }
        fn eval(&self, z: &[f64]) -> Vec<f64> {
            vec![z[0].sin()]
        }
        fn jacobian(&self, z: &[f64]) -> SparseMatrix {
            let mut j = SparseMatrix::new(1, 1);
            j.push(0, 0, -z[0].cos());
            j
        }
    }

    #[test]
    fn quadratic_is_exact() {
        for p in [[0.0, 0.0, 0.0], [1.5, -2.0, 0.3], [0.9, 1e-3, -2.0]] {
            assert!(check_gradient(&SquaredNorm, &p) < 1e-8);
        }
    }

    #[test]
    fn wrong_derivative_is_flagged() {
        assert!(check_gradient(&WrongSign, &[0.3]) > 1.0);
    }
}
