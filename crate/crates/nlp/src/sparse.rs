//! Coordinate-format sparse matrices.
//!
//! Jacobians are assembled as triplet lists (duplicates are summed) and
//! compressed into row-major form when products are needed.

/// A sparse matrix in coordinate form. Duplicate entries are summed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, capacity: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Raw triplets, possibly with duplicates.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Adds `value` at `(row, col)`. Exact zeros are skipped.
    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols, "({row}, {col}) out of bounds");
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Adds an entry even when it is zero, keeping it in the sparsity pattern.
    #[inline]
    pub fn push_structural(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `y = Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for &(r, c, v) in &self.entries {
            dense[r][c] += v;
        }
        dense
    }

    /// Row-compressed copy with duplicates merged and columns sorted.
    pub fn to_csr(&self) -> Csr {
        let mut counts = vec![0usize; self.nrows + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.entries.len()];
        let mut vals = vec![0.0; self.entries.len()];
        for &(r, c, v) in &self.entries {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut out_cols = Vec::with_capacity(cols.len());
        let mut out_vals = Vec::with_capacity(vals.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_unstable_by_key(|&(c, _)| c);
            let mut iter = scratch.iter().copied();
            if let Some((mut cur_c, mut cur_v)) = iter.next() {
                for (c, v) in iter {
                    if c == cur_c {
                        cur_v += v;
                    } else {
                        out_cols.push(cur_c);
                        out_vals.push(cur_v);
                        cur_c = c;
                        cur_v = v;
                    }
                }
                out_cols.push(cur_c);
                out_vals.push(cur_v);
            }
            row_ptr.push(out_cols.len());
        }
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            cols: out_cols,
            vals: out_vals,
        }
    }

    /// Keeps only the listed columns, renumbered in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> SparseMatrix {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in columns.iter().enumerate() {
            map[old] = new;
        }
        let mut out = SparseMatrix::with_capacity(self.nrows, columns.len(), self.entries.len());
        for &(r, c, v) in &self.entries {
            if map[c] != usize::MAX {
                out.entries.push((r, map[c], v));
            }
        }
        out
    }

    /// Max absolute entry after merging duplicates.
    pub fn max_abs(&self) -> f64 {
        let csr = self.to_csr();
        csr.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    /// Squared two-norm of every column.
    pub fn column_sq_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (c, v) in self.cols.iter().zip(&self.vals) {
            out[*c] += v * v;
        }
        out
    }
}
