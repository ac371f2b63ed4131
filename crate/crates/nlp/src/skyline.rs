//! Symmetric positive definite matrices in variable-band (envelope) storage.
//!
//! Row `i` stores columns `first[i]..=i`. Cholesky fill never leaves the
//! envelope, so the factor reuses the same layout. Problems that order their
//! variables by time step get a narrow band; a handful of dense trailing rows
//! (global parameters) only cost one full row each.

use crate::sparse::Csr;

/// Sparsity envelope: first structurally nonzero column of every row.
#[derive(Debug, Clone)]
pub struct Profile {
    first: Vec<usize>,
}

impl Profile {
    pub fn diagonal(n: usize) -> Self {
        Self {
            first: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Marks the symmetric pair `(i, j)` as structurally nonzero.
    #[inline]
    pub fn touch(&mut self, i: usize, j: usize) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if lo < self.first[hi] {
            self.first[hi] = lo;
        }
    }

    /// Widens the envelope to hold `AᵀA` for the given row-compressed `A`.
    pub fn touch_gram(&mut self, a: &Csr) {
        for r in 0..a.nrows {
            let (cols, _) = a.row(r);
            if let Some(&lo) = cols.first() {
                for &c in cols {
                    if lo < self.first[c] {
                        self.first[c] = lo;
                    }
                }
            }
        }
    }

    pub fn stored_entries(&self) -> usize {
        self.first.iter().enumerate().map(|(i, f)| i - f + 1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

/// Factorization failed: the pivot at `index` was not safely positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub index: usize,
    pub pivot: f64,
}

impl SkylineMatrix {
    pub fn zeros(profile: &Profile) -> Self {
        let mut offsets = Vec::with_capacity(profile.first.len() + 1);
        let mut acc = 0;
        for (i, &f) in profile.first.iter().enumerate() {
            offsets.push(acc);
            acc += i - f + 1;
        }
        offsets.push(acc);
        Self {
            first: profile.first.clone(),
            offsets,
            data: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i], "({i}, {j}) outside envelope");
        self.offsets[i] + (j - self.first[i])
    }

    /// Adds to the symmetric entry `(i, j)`; order of indices does not matter.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = self.index(hi, lo);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if lo < self.first[hi] {
            0.0
        } else {
            self.data[self.index(hi, lo)]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[self.offsets[i + 1] - 1]).collect()
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            let k = self.offsets[i + 1] - 1;
            self.data[k] += v;
        }
    }

    /// `self += scale · AᵀA`.
    pub fn add_gram(&mut self, a: &Csr, scale: f64) {
        for r in 0..a.nrows {
            let (cols, vals) = a.row(r);
            for (p, (&ci, &vi)) in cols.iter().zip(vals).enumerate() {
                let svi = scale * vi;
                for (&cj, &vj) in cols[..=p].iter().zip(&vals[..=p]) {
                    let k = self.index(ci, cj);
                    self.data[k] += svi * vj;
                }
            }
        }
    }

    /// Zeroes row and column `i` and puts `diag` on the diagonal.
    pub fn pin(&mut self, i: usize, diag: f64) {
        let n = self.dim();
        for j in self.first[i]..i {
            let k = self.index(i, j);
            self.data[k] = 0.0;
        }
        for r in i + 1..n {
            if self.first[r] <= i {
                let k = self.index(r, i);
                self.data[k] = 0.0;
            }
        }
        let k = self.index(i, i);
        self.data[k] = diag;
    }

    /// `y = A x` using the symmetric envelope.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.first[i];
            let row = &self.data[self.offsets[i]..self.offsets[i + 1]];
            let (off, diag) = row.split_at(row.len() - 1);
            let mut acc = diag[0] * x[i];
            for (p, &a) in off.iter().enumerate() {
                acc += a * x[f + p];
                y[f + p] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// In-place Cholesky `A = L Lᵀ`. A pivot fails when it is not finite or
    /// falls below `rel_tol` times the original diagonal entry.
    pub fn cholesky(mut self, rel_tol: f64) -> Result<SkylineCholesky, NotPositiveDefinite> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offsets[i];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let oj = self.offsets[j];
                let (head, tail) = self.data.split_at_mut(oi);
                let row_j = &head[oj + (k0 - fj)..oj + (j - fj)];
                let row_i = &tail[(k0 - fi)..(j - fi)];
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let ljj = head[oj + (j - fj)];
                let idx = j - fi;
                tail[idx] = (tail[idx] - dot) / ljj;
            }
            let row = &mut self.data[oi..self.offsets[i + 1]];
            let (off, diag) = row.split_at_mut(i - fi);
            let original = diag[0];
            let pivot = original - off.iter().map(|v| v * v).sum::<f64>();
            if !pivot.is_finite() || pivot <= rel_tol * original.abs() || pivot <= 0.0 {
                return Err(NotPositiveDefinite { index: i, pivot });
            }
            diag[0] = pivot.sqrt();
        }
        Ok(SkylineCholesky { factor: self })
    }
}

/// Lower-triangular Cholesky factor in the envelope layout of its matrix.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.dim();
        assert_eq!(b.len(), n);
        let mut z = b.to_vec();
        for i in 0..n {
            let f = l.first[i];
            let row = &l.data[l.offsets[i]..l.offsets[i + 1]];
            let (off, diag) = row.split_at(row.len() - 1);
            let dot: f64 = off.iter().zip(&z[f..i]).map(|(a, b)| a * b).sum();
            z[i] = (z[i] - dot) / diag[0];
        }
        for i in (0..n).rev() {
            let f = l.first[i];
            let row = &l.data[l.offsets[i]..l.offsets[i + 1]];
            let (off, diag) = row.split_at(row.len() - 1);
            z[i] /= diag[0];
            let xi = z[i];
            for (p, a) in off.iter().enumerate() {
                z[f + p] -= a * xi;
            }
        }
        z
    }

    /// Smallest and largest diagonal entries of the factor.
    pub fn pivot_range(&self) -> (f64, f64) {
        self.factor
            .diagonal()
            .into_iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseMatrix;

    fn dense_spd(n: usize) -> Vec<Vec<f64>> {
        // banded SPD with a dense last row/column
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 4.0 + i as f64 * 0.1;
            if i + 1 < n {
                a[i][i + 1] = -1.0;
                a[i + 1][i] = -1.0;
            }
        }
        for i in 0..n - 1 {
            a[n - 1][i] += 0.05 * (i as f64 + 1.0);
            a[i][n - 1] += 0.05 * (i as f64 + 1.0);
        }
        a[n - 1][n - 1] += n as f64;
        a
    }

    fn to_skyline(a: &[Vec<f64>]) -> SkylineMatrix {
        let n = a.len();
        let mut profile = Profile::diagonal(n);
        for i in 0..n {
            for j in 0..i {
                if a[i][j] != 0.0 {
                    profile.touch(i, j);
                }
            }
        }
        let mut s = SkylineMatrix::zeros(&profile);
        for i in 0..n {
            for j in 0..=i {
                if a[i][j] != 0.0 {
                    s.add(i, j, a[i][j]);
                }
            }
        }
        s
    }

    #[test]
    fn solves_banded_arrow_system() {
        let n = 12;
        let a = dense_spd(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|row| row.iter().zip(&x_true).map(|(p, q)| p * q).sum())
            .collect();
        let s = to_skyline(&a);
        assert!(s.mul_vec(&x_true).iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
        let chol = s.cholesky(1e-14).unwrap();
        let x = chol.solve(&b);
        for (p, q) in x.iter().zip(&x_true) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_matches_dense_product() {
        let mut j = SparseMatrix::new(3, 4);
        j.push(0, 0, 1.0);
        j.push(0, 1, 2.0);
        j.push(1, 1, -1.0);
        j.push(1, 3, 0.5);
        j.push(2, 2, 3.0);
        let csr = j.to_csr();
        let mut profile = Profile::diagonal(4);
        profile.touch_gram(&csr);
        let mut s = SkylineMatrix::zeros(&profile);
        s.add_gram(&csr, 2.0);
        let d = j.to_dense();
        for r in 0..4 {
            for c in 0..4 {
                let expect: f64 = 2.0 * (0..3).map(|k| d[k][r] * d[k][c]).sum::<f64>();
                assert!((s.get(r, c) - expect).abs() < 1e-14, "({r},{c})");
            }
        }
    }

    #[test]
    fn zero_column_is_reported() {
        let mut profile = Profile::diagonal(3);
        profile.touch(2, 0);
        let mut s = SkylineMatrix::zeros(&profile);
        s.add(0, 0, 1.0);
        s.add(2, 2, 1.0);
        let err = s.cholesky(1e-14).unwrap_err();
        assert_eq!(err.index, 1);
    }

    #[test]
    fn pin_decouples_variable() {
        let a = dense_spd(5);
        let mut s = to_skyline(&a);
        s.pin(4, 1.0);
        assert_eq!(s.get(4, 0), 0.0);
        assert_eq!(s.get(4, 4), 1.0);
    }
}
