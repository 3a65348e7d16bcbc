//! Low end of the spectrum of sparse symmetric operators.
//!
//! Lanczos with full reorthogonalization builds a tridiagonal projection
//! whose eigenpairs are found by the implicit QL method. Convergence is
//! monitored through the last row of the tridiagonal eigenvector matrix
//! (`|β_k s_{k,i}|` is the residual norm of Ritz pair `i`), which only
//! needs that one row to be carried through the rotations.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbo::{normalized_laplacian, Normalization};
use crate::sparse::SparseMatrix;

/// Eigenvalues in ascending order with unit-norm eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl Eigenpairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Length of each eigenvector.
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

const QL_MAX_SWEEPS: usize = 60;
const LANCZOS_SEED: u64 = 0x1a2c_7e55;
const RESIDUAL_TOL: f64 = 1e-9;
const ESTIMATE_TOL: f64 = 1e-10;
const CHECK_EVERY: usize = 10;

/// Implicit QL on a symmetric tridiagonal matrix.
///
/// `d` holds the diagonal and is overwritten with eigenvalues (unsorted).
/// `e[i]` couples `i` and `i + 1`; it is destroyed. Each row in `rows` is
/// rotated alongside, so passing the identity's rows yields eigenvectors as
/// columns, and passing a single unit row yields one component of each.
pub fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], rows: &mut [Vec<f64>]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(Error::EigenNoConvergence { iterations: sweeps });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in rows.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = libm::sqrt(dot(x, x));
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(w, b);
            axpy(w, -c, b);
        }
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(&mut v, basis);
        if normalize(&mut v) > 1e-8 {
            return Some(v);
        }
    }
    None
}

/// Smallest `m` eigenpairs of a symmetric sparse operator.
pub fn lanczos_smallest(op: &SparseMatrix, m: usize) -> Result<Eigenpairs> {
    let n = op.n_rows();
    if op.n_cols() != n {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{}x{} operator is not square",
            n,
            op.n_cols()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::TooMany {
            requested: m,
            available: n,
        });
    }
    let anorm = op.gershgorin_bound().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let guard = (n - m).min(5);
    let watched = m + guard;
    let min_k = n.min(2 * m + 20);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    basis.push(random_unit(n, &mut rng, &[]).ok_or(Error::EigenNoConvergence { iterations: 0 })?);

    loop {
        let j = basis.len() - 1;
        let mut w = op.mul_vec(&basis[j]);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        axpy(&mut w, -a, &basis[j]);
        if j > 0 {
            axpy(&mut w, -beta[j - 1], &basis[j - 1]);
        }
        orthogonalize(&mut w, &basis);
        let k = basis.len();
        if k == n {
            return finalize(op, &basis, &alpha, &beta, m).ok_or(Error::EigenNoConvergence { iterations: k });
        }
        let b = libm::sqrt(dot(&w, &w));
        let next = if b <= 1e-10 * anorm {
            beta.push(0.0);
            random_unit(n, &mut rng, &basis).ok_or(Error::EigenNoConvergence { iterations: k })?
        } else {
            beta.push(b);
            w.iter_mut().for_each(|v| *v /= b);
            w
        };
        if k >= min_k && (k - min_k) % CHECK_EVERY == 0 && residual_estimates_converged(&alpha, &beta, watched)? {
            if let Some(pairs) = finalize(op, &basis, &alpha, &beta[..k - 1], m) {
                return Ok(pairs);
            }
        }
        basis.push(next);
    }
}

/// Checks `|β_k s_{k,i}|` for the `watched` smallest Ritz values of T_k,
/// where `beta` has k entries (the last couples to the next Lanczos vector).
fn residual_estimates_converged(alpha: &[f64], beta: &[f64], watched: usize) -> Result<bool> {
    let k = alpha.len();
    let mut d = alpha.to_vec();
    let mut e = beta[..k - 1].to_vec();
    e.push(0.0);
    let mut last = vec![vec![0.0; k]];
    last[0][k - 1] = 1.0;
    tridiagonal_ql(&mut d, &mut e, &mut last)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let bk = beta[k - 1].abs();
    Ok(order
        .iter()
        .take(watched.min(k))
        .all(|&i| bk * last[0][i].abs() < ESTIMATE_TOL))
}

fn finalize(op: &SparseMatrix, basis: &[Vec<f64>], alpha: &[f64], beta: &[f64], m: usize) -> Option<Eigenpairs> {
    let k = alpha.len();
    let n = op.n_rows();
    let mut d = alpha.to_vec();
    let mut e = beta[..k - 1].to_vec();
    e.push(0.0);
    let mut rows: Vec<Vec<f64>> = (0..k)
        .map(|r| {
            let mut row = vec![0.0; k];
            row[r] = 1.0;
            row
        })
        .collect();
    tridiagonal_ql(&mut d, &mut e, &mut rows).ok()?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &i in order.iter().take(m) {
        let mut phi = vec![0.0; n];
        for (l, v) in basis.iter().take(k).enumerate() {
            axpy(&mut phi, rows[l][i], v);
        }
        normalize(&mut phi);
        if let Some(first) = phi.iter().find(|x| x.abs() > 1e-8) {
            if *first < 0.0 {
                phi.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let lambda = d[i];
        let mut r = op.mul_vec(&phi);
        axpy(&mut r, -lambda, &phi);
        if libm::sqrt(dot(&r, &r)) >= RESIDUAL_TOL {
            return None;
        }
        values.push(lambda);
        vectors.push(phi);
    }
    Some(Eigenpairs { values, vectors })
}

/// Smallest `m` eigenpairs of the symmetric normalized Laplacian `D^{-1/2} A D^{-1/2}`.
pub fn truncated_eigenpairs(stiffness: &SparseMatrix, mass: &[f64], m: usize) -> Result<Eigenpairs> {
    let l = normalized_laplacian(stiffness, mass, Normalization::Symmetric)?;
    lanczos_smallest(&l, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ql_on_small_tridiagonal() {
        // [[2,1,0],[1,2,1],[0,1,2]] has eigenvalues 2-√2, 2, 2+√2.
        let mut d = vec![2.0, 2.0, 2.0];
        let mut e = vec![1.0, 1.0, 0.0];
        let mut rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..3).map(|c| (r == c) as u8 as f64).collect())
            .collect();
        tridiagonal_ql(&mut d, &mut e, &mut rows).unwrap();
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        let s2 = libm::sqrt(2.0);
        for (got, want) in sorted.iter().zip([2.0 - s2, 2.0, 2.0 + s2]) {
            assert!((got - want).abs() < 1e-14);
        }
        // columns are eigenvectors
        for j in 0..3 {
            let v: Vec<f64> = (0..3).map(|r| rows[r][j]).collect();
            let tv = [2.0 * v[0] + v[1], v[0] + 2.0 * v[1] + v[2], v[1] + 2.0 * v[2]];
            for r in 0..3 {
                assert!((tv[r] - d[j] * v[r]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn lanczos_diagonal_with_multiplicity() {
        let op = SparseMatrix::diagonal(&[5.0, 1.0, 3.0, 1.0, 2.0, 4.0]);
        let pairs = lanczos_smallest(&op, 4).unwrap();
        let expected = [1.0, 1.0, 2.0, 3.0];
        for (got, want) in pairs.values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-10, "{:?}", pairs.values);
        }
    }

    #[test]
    fn lanczos_rejects_too_many() {
        let op = SparseMatrix::identity(3);
        assert!(matches!(lanczos_smallest(&op, 4), Err(Error::TooMany { .. })));
        assert!(matches!(lanczos_smallest(&op, 0), Err(Error::TooMany { .. })));
    }
}
