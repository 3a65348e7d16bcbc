//! Compressed sparse row matrices.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Assembles from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("sparse triplet"));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks offsets are monotone, columns sorted and in range, values finite.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::ShapeMismatch(alloc::format!("invalid CSR: {msg}")));
        if self.row_offsets.len() != self.n_rows + 1 || self.row_offsets[0] != 0 {
            return bad("offset array");
        }
        if *self.row_offsets.last().unwrap() != self.col_indices.len() || self.col_indices.len() != self.values.len() {
            return bad("array lengths");
        }
        for r in 0..self.n_rows {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            if s > e {
                return bad("offsets not monotone");
            }
            let cols = &self.col_indices[s..e];
            if cols.iter().any(|&c| c >= self.n_cols) || cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices");
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse values"));
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self {
            n_rows: d.len(),
            n_cols: d.len(),
            row_offsets: (0..=d.len()).collect(),
            col_indices: (0..d.len()).collect(),
            values: d.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// True when |A_ij − A_ji| ≤ tol for every stored entry.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).all(|(&c, &v)| (v - self.get(c, r)).abs() <= tol)
            })
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// Y = A X for a row-major dense X with `width` columns.
    pub fn mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_cols * width);
        let mut out = vec![0.0; self.n_rows * width];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let dst = &mut out[r * width..(r + 1) * width];
            for (&c, &v) in cols.iter().zip(vals) {
                let src = &x[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// Y = Aᵀ X for a row-major dense X with `width` columns.
    pub fn transpose_mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_rows * width);
        let mut out = vec![0.0; self.n_cols * width];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let src = &x[r * width..(r + 1) * width];
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = &mut out[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, r, v)));
        }
        Self::from_triplets(self.n_cols, self.n_rows, triplets).expect("transpose of a valid matrix")
    }

    /// Returns diag(left) · A · diag(right).
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.n_rows {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            for k in s..e {
                out.values[k] *= left[r] * right[self.col_indices[k]];
            }
        }
        out
    }

    /// Returns alpha·A + beta·I (square matrices).
    pub fn affine_identity(&self, alpha: f64, beta: f64) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz() + self.n_rows);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, alpha * v)));
            triplets.push((r, r, beta));
        }
        Self::from_triplets(self.n_rows, self.n_cols, triplets).expect("affine map of a valid matrix")
    }

    /// Gershgorin bound on the spectral radius: max row sum of |entries|.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Dense row-major copy; intended for small matrices.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        out
    }

    /// P A Pᵀ where new index `perm[i]` is old index `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (perm[r], perm[c], v)));
        }
        Self::from_triplets(self.n_rows, self.n_cols, triplets).expect("permutation of a valid matrix")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 3.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(m.row_offsets(), &[0, 1, 3]);
        assert_eq!(m.col_indices(), &[1, 0, 2]);
        assert_eq!(m.values(), &[2.0, -1.0, 4.0]);
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
        m.validate().unwrap();
    }

    #[test]
    fn products_agree_with_dense() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 3.0]);
        // X is 3x2
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(m.mul_dense(&x, 2), vec![11.0, 14.0, 9.0, 12.0]);
        let y = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(m.transpose_mul_dense(&y, 2), vec![1.0, 0.0, 0.0, 3.0, 2.0, 0.0]);
        assert_eq!(
            m.transpose().to_dense(),
            vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 0.0]]
        );
    }

    #[test]
    fn rejects_bad_csr() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![1], vec![2.0]).is_ok());
    }

    #[test]
    fn affine_identity_adds_missing_diagonal() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let s = m.affine_identity(2.0, -1.0);
        assert_eq!(s.to_dense(), vec![vec![-1.0, 2.0], vec![2.0, -1.0]]);
        assert!(s.is_symmetric(0.0));
    }
}
