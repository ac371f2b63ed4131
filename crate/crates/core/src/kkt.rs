//! Stacked first-order conditions of an open-loop Nash equilibrium.
//!
//! With `F_t = x_{t+1} − f(x_t, u_t)` and per-player costates `λⁱ_t`
//! (`t = 0..T−2`, 0-based), player `i`'s conditions read
//!
//! ```text
//!   ∇_{x_t} gⁱ_t + λⁱ_{t−1} − A_tᵀ λⁱ_t = 0      t = 1..T−1
//!   ∇_{uⁱ_t} gⁱ_t − Bⁱ_tᵀ λⁱ_t = 0               t = 0..T−1
//! ```
//!
//! where `λⁱ_{T−1} = 0` and `x_0` is given. `G` stacks these blocks player by
//! player, followed by the shared dynamics block `F`.

use std::ops::Range;

use olne_nlp::{DifferentiableMap, Profile, SkylineMatrix, SparseMatrix};

use crate::dynamics::{player_state, GameDefinition, Trajectory, INPUT_DIM, STATE_DIM};
use crate::error::{check_len, GameError, Result};
use crate::objectives::{basis_term, basis_third_contraction, BasisTerm, CostParameters};

/// Which unknowns are free in a given problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutSpec {
    pub initial_state: bool,
    pub states: bool,
    pub inputs: bool,
    pub costates: bool,
    pub theta: bool,
}

/// Maps free unknowns to positions in a flat vector.
///
/// Variables are ordered by time step (`x_t`, `u_t`, then `λ¹_t … λᴺ_t`)
/// with the weights last, which keeps the KKT normal matrix banded.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub spec: LayoutSpec,
    n: usize,
    m: usize,
    x: Vec<Option<usize>>,
    u: Vec<Option<usize>>,
    lambda: Vec<Option<usize>>,
    theta: Option<usize>,
    basis_offsets: Vec<usize>,
    dim: usize,
}

impl VariableLayout {
    pub fn new(game: &GameDefinition, spec: LayoutSpec) -> Self {
        let (n, m, horizon) = (game.state_dim(), game.input_dim(), game.horizon);
        let mut next = 0;
        let mut take = |size: usize| {
            let at = next;
            next += size;
            Some(at)
        };
        let mut x = vec![None; horizon];
        let mut u = vec![None; horizon];
        let mut lambda = vec![None; horizon - 1];
        for t in 0..horizon {
            if spec.states && (t > 0 || spec.initial_state) {
                x[t] = take(n);
            }
            if spec.inputs {
                u[t] = take(m);
            }
            if spec.costates && t + 1 < horizon {
                lambda[t] = take(n * game.num_players());
            }
        }
        let mut basis_offsets = Vec::with_capacity(game.num_players());
        let mut k = 0;
        for p in &game.players {
            basis_offsets.push(k);
            k += p.bases.len();
        }
        let theta = if spec.theta { take(k) } else { None };
        Self {
            spec,
            n,
            m,
            x,
            u,
            lambda,
            theta,
            basis_offsets,
            dim: next,
        }
    }

    /// `(x_1.., u, λ)` with `x_0` fixed.
    pub fn forward(game: &GameDefinition) -> Self {
        Self::new(
            game,
            LayoutSpec {
                initial_state: false,
                states: true,
                inputs: true,
                costates: true,
                theta: false,
            },
        )
    }

    /// Everything, including the initial state and the weights.
    pub fn joint(game: &GameDefinition) -> Self {
        Self::new(
            game,
            LayoutSpec {
                initial_state: true,
                states: true,
                inputs: true,
                costates: true,
                theta: true,
            },
        )
    }

    pub fn baseline(game: &GameDefinition) -> Self {
        Self::new(
            game,
            LayoutSpec {
                initial_state: false,
                states: false,
                inputs: false,
                costates: true,
                theta: true,
            },
        )
    }

    pub fn costates_only(game: &GameDefinition) -> Self {
        Self::new(
            game,
            LayoutSpec {
                initial_state: false,
                states: false,
                inputs: false,
                costates: true,
                theta: false,
            },
        )
    }

    /// `(x_0.., u)`
    pub fn trajectory(game: &GameDefinition) -> Self {
        Self::new(
            game,
            LayoutSpec {
                initial_state: true,
                states: true,
                inputs: true,
                costates: false,
                theta: false,
            },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, t: usize) -> Option<usize> {
        self.x[t]
    }

    pub fn u(&self, t: usize) -> Option<usize> {
        self.u[t]
    }

    pub fn lambda(&self, player: usize, t: usize) -> Option<usize> {
        self.lambda[t].map(|o| o + player * self.n)
    }

    pub fn theta(&self, player: usize, basis: usize) -> Option<usize> {
        self.theta.map(|o| o + self.basis_offsets[player] + basis)
    }

    pub fn theta_offset(&self) -> Option<usize> {
        self.theta
    }

    pub fn pack(&self, point: &KktPoint) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for t in 0..self.x.len() {
            if let Some(o) = self.x[t] {
                z[o..o + self.n].copy_from_slice(&point.states[t]);
            }
            if let Some(o) = self.u[t] {
                z[o..o + self.m].copy_from_slice(&point.inputs[t]);
            }
        }
        for t in 0..self.lambda.len() {
            for (i, lam) in point.costates.iter().enumerate() {
                if let Some(o) = self.lambda(i, t) {
                    z[o..o + self.n].copy_from_slice(&lam[t]);
                }
            }
        }
        for (i, w) in point.theta.weights.iter().enumerate() {
            for (j, v) in w.iter().enumerate() {
                if let Some(o) = self.theta(i, j) {
                    z[o] = *v;
                }
            }
        }
        z
    }

    /// Overwrites the free unknowns of `base` with the entries of `z`.
    pub fn unpack(&self, z: &[f64], base: &KktPoint) -> KktPoint {
        let mut p = base.clone();
        self.unpack_into(z, &mut p);
        p
    }

    pub fn unpack_into(&self, z: &[f64], p: &mut KktPoint) {
        for t in 0..self.x.len() {
            if let Some(o) = self.x[t] {
                p.states[t].copy_from_slice(&z[o..o + self.n]);
            }
            if let Some(o) = self.u[t] {
                p.inputs[t].copy_from_slice(&z[o..o + self.m]);
            }
        }
        for t in 0..self.lambda.len() {
            for i in 0..p.costates.len() {
                if let Some(o) = self.lambda(i, t) {
                    p.costates[i][t].copy_from_slice(&z[o..o + self.n]);
                }
            }
        }
        for i in 0..p.theta.weights.len() {
            for j in 0..p.theta.weights[i].len() {
                if let Some(o) = self.theta(i, j) {
                    p.theta.weights[i][j] = z[o];
                }
            }
        }
    }
}

/// A candidate `(x, u, λ, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// `[player][t][n]`, `t` in `0..T−1`.
    pub costates: Vec<Vec<Vec<f64>>>,
    pub theta: CostParameters,
}

impl KktPoint {
    /// Uses the trajectory's costates, or zeros when it has none.
    pub fn new(game: &GameDefinition, traj: &Trajectory, theta: &CostParameters) -> Self {
        let costates = traj
            .costates
            .clone()
            .unwrap_or_else(|| zero_costates(game));
        Self {
            states: traj.states.clone(),
            inputs: traj.inputs.clone(),
            costates,
            theta: theta.clone(),
        }
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            states: self.states.clone(),
            inputs: self.inputs.clone(),
            costates: Some(self.costates.clone()),
            feasible: false,
        }
    }
}

pub fn zero_costates(game: &GameDefinition) -> Vec<Vec<Vec<f64>>> {
    vec![vec![vec![0.0; game.state_dim()]; game.horizon - 1]; game.num_players()]
}

/// Row index map of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KktBlocks {
    pub num_players: usize,
    pub horizon: usize,
    pub state_dim: usize,
}

impl KktBlocks {
    pub fn new(game: &GameDefinition) -> Self {
        Self {
            num_players: game.num_players(),
            horizon: game.horizon,
            state_dim: game.state_dim(),
        }
    }

    fn player_len(&self) -> usize {
        (self.horizon - 1) * self.state_dim + INPUT_DIM * self.horizon
    }

    pub fn len(&self) -> usize {
        self.num_players * self.player_len() + (self.horizon - 1) * self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First row of `∇_{x_t}` stationarity for `t ≥ 1`.
    pub fn state_row(&self, player: usize, t: usize) -> usize {
        debug_assert!(t >= 1 && t < self.horizon);
        player * self.player_len() + (t - 1) * self.state_dim
    }

    pub fn input_row(&self, player: usize, t: usize) -> usize {
        player * self.player_len() + (self.horizon - 1) * self.state_dim + INPUT_DIM * t
    }

    pub fn dynamics_row(&self, t: usize) -> usize {
        self.num_players * self.player_len() + t * self.state_dim
    }

    pub fn player_rows(&self, player: usize) -> Range<usize> {
        player * self.player_len()..(player + 1) * self.player_len()
    }

    pub fn stationarity_rows(&self) -> Range<usize> {
        0..self.num_players * self.player_len()
    }

    pub fn dynamics_rows(&self) -> Range<usize> {
        self.num_players * self.player_len()..self.len()
    }
}

/// Residual `G`, optionally its Jacobian w.r.t. the free unknowns of a layout.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub residual: Vec<f64>,
    pub jacobian: Option<SparseMatrix>,
    pub blocks: KktBlocks,
    /// Some proximity term was evaluated on its quadratic extension.
    pub clamped: bool,
}

impl KktSystem {
    pub fn norm_inf(&self) -> f64 {
        crate::dynamics::norm_inf(&self.residual)
    }

    pub fn stationarity_norm_inf(&self) -> f64 {
        crate::dynamics::norm_inf(&self.residual[self.blocks.stationarity_rows()])
    }

    pub fn dynamics_norm_inf(&self) -> f64 {
        crate::dynamics::norm_inf(&self.residual[self.blocks.dynamics_rows()])
    }
}

pub fn check_point(game: &GameDefinition, point: &KktPoint) -> Result<()> {
    check_len("state sequence", game.horizon, point.states.len())?;
    check_len("input sequence", game.horizon, point.inputs.len())?;
    for x in &point.states {
        check_len("global state", game.state_dim(), x.len())?;
    }
    for u in &point.inputs {
        check_len("joint input", game.input_dim(), u.len())?;
    }
    check_len("costate player count", game.num_players(), point.costates.len())?;
    for lam in &point.costates {
        check_len("costate sequence", game.horizon - 1, lam.len())?;
        for l in lam {
            check_len("costate", game.state_dim(), l.len())?;
        }
    }
    point.theta.check_shape(game)
}

/// Evaluates `G` at `point`; with a layout, also its Jacobian w.r.t. the
/// layout's free unknowns.
pub fn assemble_kkt(game: &GameDefinition, point: &KktPoint, layout: Option<&VariableLayout>) -> Result<KktSystem> {
    check_point(game, point)?;
    if let Some(l) = layout {
        if l.x.len() != game.horizon || l.n != game.state_dim() {
            return Err(GameError::Config("variable layout built for a different game".into()));
        }
    }
    Ok(kkt_unchecked(game, point, layout))
}

struct Columns<'a> {
    layout: Option<&'a VariableLayout>,
    jac: Option<SparseMatrix>,
}

impl Columns<'_> {
    fn push(&mut self, row: usize, col: Option<usize>, v: f64) {
        if let (Some(j), Some(c)) = (self.jac.as_mut(), col) {
            j.push(row, c, v);
        }
    }

    fn col<F: Fn(&VariableLayout) -> Option<usize>>(&self, f: F) -> Option<usize> {
        self.jac.as_ref()?;
        self.layout.and_then(f)
    }
}

pub(crate) fn kkt_unchecked(game: &GameDefinition, point: &KktPoint, layout: Option<&VariableLayout>) -> KktSystem {
    let blocks = KktBlocks::new(game);
    let (n, horizon, np) = (game.state_dim(), game.horizon, game.num_players());
    let mut residual = vec![0.0; blocks.len()];
    let mut cols = Columns {
        layout,
        jac: layout.map(|l| SparseMatrix::with_capacity(blocks.len(), l.dim(), 64 * blocks.len())),
    };
    let mut clamped = false;
    let mut terms: Vec<BasisTerm> = Vec::new();

    for t in 0..horizon {
        let x = &point.states[t];
        let u = &point.inputs[t];
        let jacs: Vec<_> = game
            .players
            .iter()
            .enumerate()
            .map(|(p, spec)| spec.dynamics.jacobians(&player_state(x, p), game.dt))
            .collect();
        let has_next = t + 1 < horizon;
        let col_x = cols.col(|l| l.x(t));
        let col_u = cols.col(|l| l.u(t));

        for i in 0..np {
            let w = point.theta.player(i);
            terms.clear();
            for b in &game.players[i].bases {
                let term = basis_term(game, b, i, t, x, u);
                clamped |= term.clamped;
                terms.push(term);
            }
            let lam_t = if has_next { Some(&point.costates[i][t]) } else { None };

            if t >= 1 {
                let row0 = blocks.state_row(i, t);
                let r = &mut residual[row0..row0 + n];
                for (term, wj) in terms.iter().zip(w) {
                    for &(k, g) in &term.grad_x {
                        r[k] += wj * g;
                    }
                }
                for (rk, l) in r.iter_mut().zip(&point.costates[i][t - 1]) {
                    *rk += l;
                }
                if let Some(lam) = lam_t {
                    for (p, (a, _)) in jacs.iter().enumerate() {
                        for c in 0..STATE_DIM {
                            let mut s = 0.0;
                            for rr in 0..STATE_DIM {
                                s += a[rr][c] * lam[STATE_DIM * p + rr];
                            }
                            r[STATE_DIM * p + c] -= s;
                        }
                    }
                }
                if cols.jac.is_some() {
                    if col_x.is_some() {
                        let cx = col_x.unwrap();
                        for (term, wj) in terms.iter().zip(w) {
                            for &(k, l, h) in &term.hess_xx {
                                cols.push(row0 + k, Some(cx + l), wj * h);
                            }
                        }
                        if let Some(lam) = lam_t {
                            for (p, spec) in game.players.iter().enumerate() {
                                let o = STATE_DIM * p;
                                let h = spec.dynamics.weighted_state_hessian(
                                    &player_state(x, p),
                                    game.dt,
                                    &lam[o..o + STATE_DIM],
                                );
                                for a in 0..STATE_DIM {
                                    for b in 0..STATE_DIM {
                                        cols.push(row0 + o + a, Some(cx + o + b), -h[a][b]);
                                    }
                                }
                            }
                        }
                    }
                    if let Some(c) = cols.col(|l| l.lambda(i, t - 1)) {
                        for k in 0..n {
                            cols.push(row0 + k, Some(c + k), 1.0);
                        }
                    }
                    if has_next {
                        if let Some(c) = cols.col(|l| l.lambda(i, t)) {
                            for (p, (a, _)) in jacs.iter().enumerate() {
                                let o = STATE_DIM * p;
                                for cc in 0..STATE_DIM {
                                    for rr in 0..STATE_DIM {
                                        cols.push(row0 + o + cc, Some(c + o + rr), -a[rr][cc]);
                                    }
                                }
                            }
                        }
                    }
                    for (j, term) in terms.iter().enumerate() {
                        if let Some(c) = cols.col(|l| l.theta(i, j)) {
                            for &(k, g) in &term.grad_x {
                                cols.push(row0 + k, Some(c), g);
                            }
                        }
                    }
                }
            }

            let row0 = blocks.input_row(i, t);
            let (_, b) = &jacs[i];
            for c in 0..INPUT_DIM {
                let mut s: f64 = terms.iter().zip(w).map(|(term, wj)| wj * term.grad_u[c]).sum();
                if let Some(lam) = lam_t {
                    for rr in 0..STATE_DIM {
                        s -= b[rr][c] * lam[STATE_DIM * i + rr];
                    }
                }
                residual[row0 + c] = s;
            }
            if cols.jac.is_some() {
                if let Some(cu) = col_u {
                    for (term, wj) in terms.iter().zip(w) {
                        for a in 0..INPUT_DIM {
                            for c in 0..INPUT_DIM {
                                cols.push(row0 + a, Some(cu + INPUT_DIM * i + c), wj * term.hess_uu[a][c]);
                            }
                        }
                    }
                }
                if has_next {
                    if let Some(cl) = cols.col(|l| l.lambda(i, t)) {
                        for c in 0..INPUT_DIM {
                            for rr in 0..STATE_DIM {
                                cols.push(row0 + c, Some(cl + STATE_DIM * i + rr), -b[rr][c]);
                            }
                        }
                    }
                }
                for (j, term) in terms.iter().enumerate() {
                    if let Some(c) = cols.col(|l| l.theta(i, j)) {
                        for a in 0..INPUT_DIM {
                            cols.push(row0 + a, Some(c), term.grad_u[a]);
                        }
                    }
                }
            }
        }

        if has_next {
            let row0 = blocks.dynamics_row(t);
            let pred = game.step_unchecked(x, u);
            for k in 0..n {
                residual[row0 + k] = point.states[t + 1][k] - pred[k];
            }
            if cols.jac.is_some() {
                let col_next = cols.col(|l| l.x(t + 1));
                push_dynamics_jacobian(&mut cols, row0, &jacs, col_x, col_u, col_next, n);
            }
        }
    }

    KktSystem {
        residual,
        jacobian: cols.jac,
        blocks,
        clamped,
    }
}

type PlayerJacobians = Vec<([[f64; STATE_DIM]; STATE_DIM], [[f64; INPUT_DIM]; STATE_DIM])>;

fn push_dynamics_jacobian(
    cols: &mut Columns,
    row0: usize,
    jacs: &PlayerJacobians,
    col_x: Option<usize>,
    col_u: Option<usize>,
    col_next: Option<usize>,
    n: usize,
) {
    if let Some(c) = col_next {
        for k in 0..n {
            cols.push(row0 + k, Some(c + k), 1.0);
        }
    }
    for (p, (a, b)) in jacs.iter().enumerate() {
        let o = STATE_DIM * p;
        for r in 0..STATE_DIM {
            if let Some(c) = col_x {
                for cc in 0..STATE_DIM {
                    cols.push(row0 + o + r, Some(c + o + cc), -a[r][cc]);
                }
            }
            if let Some(c) = col_u {
                for cc in 0..INPUT_DIM {
                    cols.push(row0 + o + r, Some(c + INPUT_DIM * p + cc), -b[r][cc]);
                }
            }
        }
    }
}

/// Stacked `F` and its Jacobian w.r.t. the states and inputs of `layout`.
pub fn dynamics_system(game: &GameDefinition, traj: &Trajectory, layout: &VariableLayout) -> (Vec<f64>, SparseMatrix) {
    let n = game.state_dim();
    let rows = (game.horizon - 1) * n;
    let mut residual = Vec::with_capacity(rows);
    let mut cols = Columns {
        layout: Some(layout),
        jac: Some(SparseMatrix::with_capacity(rows, layout.dim(), rows * 8)),
    };
    for t in 0..game.horizon - 1 {
        let x = &traj.states[t];
        let pred = game.step_unchecked(x, &traj.inputs[t]);
        residual.extend(traj.states[t + 1].iter().zip(&pred).map(|(a, b)| a - b));
        let jacs: PlayerJacobians = game
            .players
            .iter()
            .enumerate()
            .map(|(p, spec)| spec.dynamics.jacobians(&player_state(x, p), game.dt))
            .collect();
        push_dynamics_jacobian(&mut cols, t * n, &jacs, layout.x(t), layout.u(t), layout.x(t + 1), n);
    }
    (residual, cols.jac.unwrap())
}

/// Solves `min ‖J δ + r‖²` through the normal equations, with a relative
/// Tikhonov term `damping · diag(JᵀJ)` and one step of iterative refinement.
/// Returns `None` when the normal matrix is numerically singular.
pub(crate) fn least_squares_step(jac: &SparseMatrix, r: &[f64], damping: f64) -> Option<Vec<f64>> {
    let csr = jac.to_csr();
    let dim = jac.ncols();
    let mut profile = Profile::diagonal(dim);
    profile.touch_gram(&csr);
    let mut normal = SkylineMatrix::zeros(&profile);
    normal.add_gram(&csr, 1.0);
    let diag = normal.diagonal();
    let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(*d));
    if max_diag <= 0.0 || !max_diag.is_finite() {
        return None;
    }
    // Marquardt scaling: an all-zero column stays singular at any damping.
    let shift: Vec<f64> = diag.iter().map(|d| damping * d).collect();
    normal.add_diagonal(&shift);
    let rhs: Vec<f64> = jac.tr_mul_vec(r).iter().map(|v| -v).collect();
    let chol = normal.clone().cholesky(1e-13).ok()?;
    let mut delta = chol.solve(&rhs);
    let applied = normal.mul_vec(&delta);
    let defect: Vec<f64> = rhs.iter().zip(&applied).map(|(a, b)| a - b).collect();
    let correction = chol.solve(&defect);
    for (d, c) in delta.iter_mut().zip(&correction) {
        *d += c;
    }
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

/// Costates minimizing the stationarity residual at fixed `(x, u, θ)`.
pub fn fit_costates(
    game: &GameDefinition,
    traj: &Trajectory,
    theta: &CostParameters,
) -> Result<Vec<Vec<Vec<f64>>>> {
    game.check_trajectory(traj)?;
    theta.check_shape(game)?;
    let layout = VariableLayout::costates_only(game);
    let mut point = KktPoint::new(game, traj, theta);
    point.costates = zero_costates(game);
    let sys = kkt_unchecked(game, &point, Some(&layout));
    let rows = sys.blocks.stationarity_rows();
    let jac = sys.jacobian.unwrap();
    let mut stat = SparseMatrix::with_capacity(rows.len(), layout.dim(), jac.entries().len());
    for &(r, c, v) in jac.entries() {
        if r < rows.end {
            stat.push(r, c, v);
        }
    }
    let delta = least_squares_step(&stat, &sys.residual[rows], 1e-14)
        .ok_or_else(|| GameError::Config("costate least-squares system is singular".into()))?;
    layout.unpack_into(&delta, &mut point);
    Ok(point.costates)
}

/// Costates from the state-stationarity blocks by backward recursion,
/// `λ_{T−2} = −∇_{x_{T−1}} g` and `λ_{t−1} = A_tᵀ λ_t − ∇_{x_t} g_t`.
pub fn recursive_costates(
    game: &GameDefinition,
    traj: &Trajectory,
    theta: &CostParameters,
) -> Result<Vec<Vec<Vec<f64>>>> {
    game.check_trajectory(traj)?;
    theta.check_shape(game)?;
    let (n, horizon) = (game.state_dim(), game.horizon);
    let mut out = zero_costates(game);
    for (i, lam) in out.iter_mut().enumerate() {
        let grads = crate::objectives::cost_gradients(game, traj, theta.player(i), i)?;
        for t in (1..horizon).rev() {
            let mut prev = vec![0.0; n];
            if t + 1 < horizon {
                let x = &traj.states[t];
                for (p, spec) in game.players.iter().enumerate() {
                    let (a, _) = spec.dynamics.jacobians(&player_state(x, p), game.dt);
                    let o = STATE_DIM * p;
                    for c in 0..STATE_DIM {
                        for r in 0..STATE_DIM {
                            prev[o + c] += a[r][c] * lam[t][o + r];
                        }
                    }
                }
            }
            for (pk, g) in prev.iter_mut().zip(&grads.state[t]) {
                *pk -= g;
            }
            lam[t - 1] = prev;
        }
    }
    Ok(out)
}

fn upper(out: &mut Vec<(usize, usize, f64)>, i: usize, j: usize, v: f64) {
    if v != 0.0 {
        out.push((i.min(j), i.max(j), v));
    }
}

/// `Σ_r w_r ∇²G_r` w.r.t. the free unknowns of `layout`, one entry per
/// unordered pair (duplicates are to be summed).
pub(crate) fn kkt_weighted_hessian(
    game: &GameDefinition,
    point: &KktPoint,
    layout: &VariableLayout,
    weights: &[f64],
) -> Vec<(usize, usize, f64)> {
    let blocks = KktBlocks::new(game);
    let (n, horizon) = (game.state_dim(), game.horizon);
    let mut out = Vec::new();
    for t in 0..horizon {
        let x = &point.states[t];
        let u = &point.inputs[t];
        let has_next = t + 1 < horizon;
        let cx = layout.x(t);
        for (i, spec) in game.players.iter().enumerate() {
            let th = point.theta.player(i);
            if let (Some(cx), true) = (cx, t >= 1) {
                let row0 = blocks.state_row(i, t);
                let w = &weights[row0..row0 + n];
                for (j, b) in spec.bases.iter().enumerate() {
                    if b.is_control_effort() {
                        continue;
                    }
                    if let Some(ct) = layout.theta(i, j) {
                        let term = basis_term(game, b, i, t, x, u);
                        for &(a, k, h) in &term.hess_xx {
                            upper(&mut out, ct, cx + k, w[a] * h);
                        }
                    }
                    for (a, c, h) in basis_third_contraction(game, b, i, x, w) {
                        if a <= c {
                            upper(&mut out, cx + a, cx + c, th[j] * h);
                        }
                    }
                }
                if has_next {
                    let lam = &point.costates[i][t];
                    let cl = layout.lambda(i, t);
                    for (p, other) in game.players.iter().enumerate() {
                        let o = STATE_DIM * p;
                        let (xx, cross) = other.dynamics.costate_curvature(
                            &player_state(x, p),
                            game.dt,
                            &lam[o..o + STATE_DIM],
                            &w[o..o + STATE_DIM],
                        );
                        for a in 0..STATE_DIM {
                            for b in a..STATE_DIM {
                                upper(&mut out, cx + o + a, cx + o + b, -xx[a][b]);
                            }
                            if let Some(cl) = cl {
                                for r in 0..STATE_DIM {
                                    upper(&mut out, cx + o + a, cl + o + r, -cross[a][r]);
                                }
                            }
                        }
                    }
                }
            }
            if let Some(cu) = layout.u(t) {
                let row0 = blocks.input_row(i, t);
                let w = &weights[row0..row0 + INPUT_DIM];
                for (j, b) in spec.bases.iter().enumerate() {
                    let (Some(ct), true) = (layout.theta(i, j), b.is_control_effort()) else {
                        continue;
                    };
                    let term = basis_term(game, b, i, t, x, u);
                    for a in 0..INPUT_DIM {
                        for c in 0..INPUT_DIM {
                            upper(&mut out, ct, cu + INPUT_DIM * i + c, w[a] * term.hess_uu[a][c]);
                        }
                    }
                }
            }
        }
        if let (Some(cx), true) = (cx, has_next) {
            let row0 = blocks.dynamics_row(t);
            for (p, spec) in game.players.iter().enumerate() {
                let o = STATE_DIM * p;
                let h = spec
                    .dynamics
                    .weighted_state_hessian(&player_state(x, p), game.dt, &weights[row0 + o..row0 + o + STATE_DIM]);
                for a in 0..STATE_DIM {
                    for b in a..STATE_DIM {
                        upper(&mut out, cx + o + a, cx + o + b, -h[a][b]);
                    }
                }
            }
        }
    }
    out
}

/// `G` as a function of a layout's free unknowns, everything else held at `base`.
pub struct KktMap<'a> {
    pub game: &'a GameDefinition,
    pub layout: &'a VariableLayout,
    pub base: &'a KktPoint,
}

impl DifferentiableMap for KktMap<'_> {
    fn input_dim(&self) -> usize {
        self.layout.dim()
    }

    fn eval(&self, z: &[f64]) -> Vec<f64> {
        kkt_unchecked(self.game, &self.layout.unpack(z, self.base), None).residual
    }

    fn jacobian(&self, z: &[f64]) -> SparseMatrix {
        kkt_unchecked(self.game, &self.layout.unpack(z, self.base), Some(self.layout))
            .jacobian
            .unwrap()
    }
}
