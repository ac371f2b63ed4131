//! Augmented Lagrangian method with projected Levenberg-Marquardt inner solves.
//!
//! Solves
//!
//! ```text
//!   min f(z)   s.t.  c(z) = 0,   lo <= z <= hi
//! ```
//!
//! The outer loop updates multipliers `y <- y + rho c(z)` and grows the
//! penalty when feasibility stalls. Each inner problem minimizes
//! `f + yᵀc + rho/2 |c|²` over the box with a damped Newton-type model
//! `H_f + rho JᵀJ (+ Σ w_i ∇²c_i)` factored in envelope storage.

use crate::skyline::{Profile, SkylineCholesky, SkylineMatrix};
use crate::sparse::{Csr, SparseMatrix};

/// Second-order information for the objective.
#[derive(Debug, Clone)]
pub enum Curvature {
    /// `f = ½|r|²` with residual Jacobian `J`; the model Hessian is `JᵀJ`.
    GaussNewton(SparseMatrix),
    /// Symmetric Hessian entries; each off-diagonal pair listed once.
    Hessian(Vec<(usize, usize, f64)>),
    /// No curvature (linear objective or zero).
    None,
}

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub curvature: Curvature,
}

impl ObjectiveEval {
    /// `f = ½|r|²`, `∇f = Jᵀr`.
    pub fn least_squares(residuals: &[f64], jacobian: SparseMatrix) -> Self {
        let value = 0.5 * residuals.iter().map(|r| r * r).sum::<f64>();
        let gradient = jacobian.tr_mul_vec(residuals);
        Self {
            value,
            gradient,
            curvature: Curvature::GaussNewton(jacobian),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            value: 0.0,
            gradient: vec![0.0; dim],
            curvature: Curvature::None,
        }
    }
}

/// A smooth equality-constrained program with simple bounds.
///
/// Solver cost is driven by the envelope of the model Hessian, so
/// implementors should order variables to keep coupled variables close
/// (e.g. by time step), with any globally coupled variables last.
pub trait NlpProblem {
    fn dim(&self) -> usize;

    fn num_constraints(&self) -> usize;

    fn lower_bounds(&self) -> Vec<f64> {
        vec![f64::NEG_INFINITY; self.dim()]
    }

    fn upper_bounds(&self) -> Vec<f64> {
        vec![f64::INFINITY; self.dim()]
    }

    fn objective(&self, z: &[f64]) -> ObjectiveEval;

    fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective(z).value
    }

    fn constraints(&self, z: &[f64]) -> Vec<f64>;

    /// Jacobian of `constraints`, shape `num_constraints × dim`.
    fn constraint_jacobian(&self, z: &[f64]) -> SparseMatrix;

    /// Optional `Σ_i weights_i ∇²c_i(z)`; `None` falls back to Gauss-Newton.
    fn constraint_curvature(&self, _z: &[f64], _weights: &[f64]) -> Option<Vec<(usize, usize, f64)>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Grow the penalty unless feasibility shrinks below this fraction.
    pub feasibility_ratio: f64,
    pub max_penalty: f64,
    /// Inner tolerance of the first outer iteration; tightened ×0.1 per round.
    pub initial_inner_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_opt: 1e-6,
            max_outer: 50,
            max_inner: 200,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            feasibility_ratio: 0.25,
            max_penalty: 1e12,
            initial_inner_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub z: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
    /// `|c(z)|∞`
    pub feasibility: f64,
    /// `|z - P(z - ∇L)|∞` with the returned multipliers.
    pub stationarity: f64,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Iterate whose evaluation produced a non-finite value.
    pub diverged_at: Option<Vec<f64>>,
}

impl NlpSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

pub fn solve<P: NlpProblem + ?Sized>(problem: &P, init: &[f64], config: &SolverConfig) -> NlpSolution {
    let m = problem.num_constraints();
    solve_with_multipliers(problem, init, &vec![0.0; m], config)
}

pub fn solve_with_multipliers<P: NlpProblem + ?Sized>(
    problem: &P,
    init: &[f64],
    multipliers: &[f64],
    config: &SolverConfig,
) -> NlpSolution {
    let n = problem.dim();
    let m = problem.num_constraints();
    assert_eq!(init.len(), n, "initial point has wrong dimension");
    assert_eq!(multipliers.len(), m, "multiplier vector has wrong dimension");

    let bounds = Bounds {
        lo: problem.lower_bounds(),
        hi: problem.upper_bounds(),
    };
    let mut z = bounds.project(init);
    let mut y = multipliers.to_vec();
    let mut rho = config.initial_penalty;
    let mut inner_tol = config.initial_inner_tol.max(config.tol_opt);
    let mut inner_total = 0;

    let c0 = problem.constraints(&z);
    let f0 = problem.objective_value(&z);
    if !f0.is_finite() || c0.iter().any(|v| !v.is_finite()) {
        return NlpSolution {
            objective: f0,
            feasibility: f64::NAN,
            stationarity: f64::NAN,
            status: SolveStatus::Diverged,
            outer_iterations: 0,
            inner_iterations: 0,
            diverged_at: Some(z.clone()),
            z,
            multipliers: y,
        };
    }
    let mut feas = norm_inf(&c0);

    let mut outer = 0;
    let mut stationarity = f64::INFINITY;
    let mut status = SolveStatus::MaxIterations;
    let mut diverged_at = None;

    while outer < config.max_outer {
        outer += 1;
        let inner = inner_solve(problem, &bounds, &z, &y, rho, inner_tol, config.max_inner);
        inner_total += inner.iterations;
        z = inner.z;
        if let Some(bad) = inner.diverged_at {
            status = SolveStatus::Diverged;
            diverged_at = Some(bad);
            break;
        }

        let c = problem.constraints(&z);
        for (yi, ci) in y.iter_mut().zip(&c) {
            *yi += rho * ci;
        }
        let feas_new = norm_inf(&c);
        stationarity = lagrangian_stationarity(problem, &bounds, &z, &y);
        log::trace!(
            "outer {outer}: feas {feas_new:.3e} stat {stationarity:.3e} rho {rho:.1e} inner {}",
            inner.iterations
        );
        if feas_new <= config.tol_feas && stationarity <= config.tol_opt {
            feas = feas_new;
            status = SolveStatus::Converged;
            break;
        }
        if feas_new > config.tol_feas && feas_new > config.feasibility_ratio * feas {
            rho = (rho * config.penalty_growth).min(config.max_penalty);
        }
        feas = feas_new;
        inner_tol = (inner_tol * 0.1).max(0.5 * config.tol_opt);
    }

    if status == SolveStatus::MaxIterations && stationarity.is_infinite() {
        stationarity = lagrangian_stationarity(problem, &bounds, &z, &y);
    }

    NlpSolution {
        objective: problem.objective_value(&z),
        feasibility: feas,
        stationarity,
        status,
        outer_iterations: outer,
        inner_iterations: inner_total,
        diverged_at,
        z,
        multipliers: y,
    }
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn project(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.max(*l).min(*h))
            .collect()
    }

    /// `|z - P(z - g)|∞`
    fn projected_gradient_norm(&self, z: &[f64], g: &[f64]) -> f64 {
        z.iter()
            .zip(g)
            .zip(self.lo.iter().zip(&self.hi))
            .map(|((zi, gi), (l, h))| (zi - (zi - gi).max(*l).min(*h)).abs())
            .fold(0.0, f64::max)
    }

    fn is_active(&self, i: usize, z: f64, g: f64) -> bool {
        (z <= self.lo[i] && g > 0.0) || (z >= self.hi[i] && g < 0.0)
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn lagrangian_stationarity<P: NlpProblem + ?Sized>(problem: &P, bounds: &Bounds, z: &[f64], y: &[f64]) -> f64 {
    let obj = problem.objective(z);
    let jac = problem.constraint_jacobian(z);
    let jty = jac.tr_mul_vec(y);
    let g: Vec<f64> = obj.gradient.iter().zip(&jty).map(|(a, b)| a + b).collect();
    bounds.projected_gradient_norm(z, &g)
}

struct InnerResult {
    z: Vec<f64>,
    iterations: usize,
    diverged_at: Option<Vec<f64>>,
}

fn merit<P: NlpProblem + ?Sized>(problem: &P, z: &[f64], y: &[f64], rho: f64) -> f64 {
    let f = problem.objective_value(z);
    let c = problem.constraints(z);
    let lin: f64 = y.iter().zip(&c).map(|(a, b)| a * b).sum();
    let quad: f64 = c.iter().map(|v| v * v).sum();
    f + lin + 0.5 * rho * quad
}

/// Assembled model Hessian of the augmented Lagrangian.
struct Model {
    hessian: SkylineMatrix,
}

fn assemble_model(
    n: usize,
    objective: &ObjectiveEval,
    jac: &Csr,
    rho: f64,
    curvature: Option<&[(usize, usize, f64)]>,
) -> Model {
    let mut profile = Profile::diagonal(n);
    profile.touch_gram(jac);
    let gn_csr = match &objective.curvature {
        Curvature::GaussNewton(j) => {
            let csr = j.to_csr();
            profile.touch_gram(&csr);
            Some(csr)
        }
        Curvature::Hessian(entries) => {
            for &(i, j, _) in entries {
                profile.touch(i, j);
            }
            None
        }
        Curvature::None => None,
    };
    if let Some(entries) = curvature {
        for &(i, j, _) in entries {
            profile.touch(i, j);
        }
    }
    let mut h = SkylineMatrix::zeros(&profile);
    h.add_gram(jac, rho);
    match (&objective.curvature, gn_csr) {
        (Curvature::GaussNewton(_), Some(csr)) => h.add_gram(&csr, 1.0),
        (Curvature::Hessian(entries), _) => {
            for &(i, j, v) in entries {
                h.add(i, j, v);
            }
        }
        _ => {}
    }
    if let Some(entries) = curvature {
        for &(i, j, v) in entries {
            h.add(i, j, v);
        }
    }
    Model { hessian: h }
}

fn inner_solve<P: NlpProblem + ?Sized>(
    problem: &P,
    bounds: &Bounds,
    z0: &[f64],
    y: &[f64],
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> InnerResult {
    let n = z0.len();
    let mut z = z0.to_vec();
    let mut mu = 1e-8;
    let mut current = merit(problem, &z, y, rho);
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let obj = problem.objective(&z);
        let c = problem.constraints(&z);
        let jac = problem.constraint_jacobian(&z).to_csr();
        let w: Vec<f64> = y.iter().zip(&c).map(|(yi, ci)| yi + rho * ci).collect();
        let mut g = obj.gradient.clone();
        for r in 0..jac.nrows {
            let (cols, vals) = jac.row(r);
            for (ci, v) in cols.iter().zip(vals) {
                g[*ci] += v * w[r];
            }
        }
        let pg = bounds.projected_gradient_norm(&z, &g);
        log::trace!("  inner {iterations}: merit {current:.10e} pg {pg:.3e} mu {mu:.1e}");
        if pg <= tol && iterations > 1 {
            break;
        }
        if pg == 0.0 {
            break;
        }

        let curvature = problem.constraint_curvature(&z, &w);
        let model = assemble_model(n, &obj, &jac, rho, curvature.as_deref());
        let active: Vec<bool> = (0..n).map(|i| bounds.is_active(i, z[i], g[i])).collect();
        let diag = model.hessian.diagonal();
        let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-12);
        let scaling: Vec<f64> = diag.iter().map(|d| d.abs().max(1e-6 * max_diag)).collect();
        let rhs: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { -g[i] }).collect();

        let mut accepted = false;
        let mut halvings = 0;
        for _ in 0..60 {
            let factor = match factor_damped(&model.hessian, &scaling, &active, mu) {
                Some(f) => f,
                None => {
                    mu = (mu * 10.0).max(1e-8);
                    continue;
                }
            };
            let mut d = factor.solve(&rhs);
            for (di, a) in d.iter_mut().zip(&active) {
                if *a {
                    *di = 0.0;
                }
            }

            // Non-finite guard: halve the step until the evaluation is finite.
            let mut trial_merit;
            let mut z_trial;
            loop {
                z_trial = bounds.project(&z.iter().zip(&d).map(|(a, b)| a + b).collect::<Vec<_>>());
                trial_merit = merit(problem, &z_trial, y, rho);
                if trial_merit.is_finite() {
                    halvings = 0;
                    break;
                }
                halvings += 1;
                if halvings >= 3 {
                    return InnerResult {
                        z,
                        iterations,
                        diverged_at: Some(z_trial),
                    };
                }
                for di in d.iter_mut() {
                    *di *= 0.5;
                }
            }

            let s: Vec<f64> = z_trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            let hs = model.hessian.mul_vec(&s);
            let gs: f64 = g.iter().zip(&s).map(|(a, b)| a * b).sum();
            let shs: f64 = s.iter().zip(&hs).map(|(a, b)| a * b).sum();
            let predicted = -(gs + 0.5 * shs);
            let actual = current - trial_merit;
            let step_norm = norm_inf(&s);
            let z_norm = norm_inf(&z);

            // Near convergence the merit decrease drops below rounding; accept
            // such steps so feasibility can still be driven down.
            let noise = 10.0 * f64::EPSILON * (1.0 + current.abs());
            let flat = predicted.abs() <= noise && actual >= -noise;
            if flat || (predicted > 0.0 && actual >= 1e-4 * predicted) {
                let ratio = if flat { 1.0 } else { actual / predicted };
                if ratio > 0.75 {
                    mu = (mu / 3.0).max(1e-12);
                } else if ratio < 0.25 {
                    mu *= 2.0;
                }
                z = z_trial;
                current = trial_merit;
                accepted = true;
                break;
            }
            if step_norm <= 1e-15 * (1.0 + z_norm) {
                break;
            }
            mu = (mu * 4.0).max(1e-8);
            if mu > 1e20 {
                break;
            }
        }
        if !accepted {
            break;
        }
    }

    InnerResult {
        z,
        iterations,
        diverged_at: None,
    }
}

fn factor_damped(
    hessian: &SkylineMatrix,
    scaling: &[f64],
    active: &[bool],
    mu: f64,
) -> Option<SkylineCholesky> {
    let mut h = hessian.clone();
    let damp: Vec<f64> = scaling.iter().map(|s| mu * s).collect();
    h.add_diagonal(&damp);
    for (i, a) in active.iter().enumerate() {
        if *a {
            h.pin(i, 1.0);
        }
    }
    h.cholesky(1e-14).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Projection;

    impl NlpProblem for Projection {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, z: &[f64]) -> ObjectiveEval {
            let mut j = SparseMatrix::new(2, 2);
            j.push(0, 0, 1.0);
            j.push(1, 1, 1.0);
            ObjectiveEval::least_squares(z, j)
        }
        fn constraints(&self, z: &[f64]) -> Vec<f64> {
            vec![z[0] - 1.0]
        }
        fn constraint_jacobian(&self, _z: &[f64]) -> SparseMatrix {
            let mut j = SparseMatrix::new(1, 2);
            j.push(0, 0, 1.0);
            j
        }
    }

    #[test]
    fn projects_onto_hyperplane() {
        let sol = solve(&Projection, &[0.0, 0.0], &SolverConfig::default());
        assert!(sol.converged(), "{sol:?}");
        assert!((sol.z[0] - 1.0).abs() < 1e-6);
        assert!(sol.z[1].abs() < 1e-9);
        assert!(sol.feasibility <= 1e-6);
        // y = -∂f/∂z1 = -1 with f = ½|z|²
        assert!((sol.multipliers[0] + 1.0).abs() < 1e-5);
    }

    struct Shifted;

    impl NlpProblem for Shifted {
        fn dim(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn lower_bounds(&self) -> Vec<f64> {
            vec![3.0]
        }
        fn objective(&self, z: &[f64]) -> ObjectiveEval {
            let mut j = SparseMatrix::new(1, 1);
            j.push(0, 0, 1.0);
            ObjectiveEval::least_squares(&[z[0] - 2.0], j)
        }
        fn constraints(&self, _z: &[f64]) -> Vec<f64> {
            Vec::new()
        }
        fn constraint_jacobian(&self, _z: &[f64]) -> SparseMatrix {
            SparseMatrix::new(0, 1)
        }
    }

    #[test]
    fn active_lower_bound() {
        let sol = solve(&Shifted, &[0.0], &SolverConfig::default());
        assert!(sol.converged());
        assert_eq!(sol.z, vec![3.0]);
    }

    struct Poisoned;

    impl NlpProblem for Poisoned {
        fn dim(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn objective(&self, z: &[f64]) -> ObjectiveEval {
            // log barrier that turns NaN once z crosses zero
            let mut j = SparseMatrix::new(1, 1);
            j.push(0, 0, 0.5 / z[0].sqrt());
            ObjectiveEval::least_squares(&[z[0].sqrt() + 10.0], j)
        }
        fn objective_value(&self, z: &[f64]) -> f64 {
            let r = z[0].sqrt() + 10.0;
            0.5 * r * r
        }
        fn constraints(&self, _z: &[f64]) -> Vec<f64> {
            Vec::new()
        }
        fn constraint_jacobian(&self, _z: &[f64]) -> SparseMatrix {
            SparseMatrix::new(0, 1)
        }
    }

    #[test]
    fn non_finite_start_is_diverged() {
        let sol = solve(&Poisoned, &[-1.0], &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Diverged);
        assert_eq!(sol.diverged_at, Some(vec![-1.0]));
    }
}
