//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use letet_core::eigen::Eigenpairs;
use letet_core::geom::Point3;
use letet_core::landmarks::DiffusionKernelSpec;
use letet_core::mesh::{normalize_mesh, validate_and_orient, TetMesh};
use letet_core::nn::{AttentionNorm, Linear, Matrix, Mlp2, ParamStore, PointTransformer};
use letet_core::tokenize::RadiusGraph;
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tet with corners drawn uniformly from the unit cube, rejecting slivers.
pub fn random_tet(rng: &mut impl Rng) -> [Point3; 4] {
    loop {
        let p: [Point3; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let e = edge_matrix(&p);
        let vol = e.determinant().abs() / 6.0;
        let longest = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| dist(&p[i], &p[j]))
            .fold(0.0, f64::max);
        if vol > 1e-2 * longest.powi(3) {
            return p;
        }
    }
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn edge_matrix(p: &[Point3; 4]) -> Matrix3<f64> {
    let col = |i: usize| Vector3::new(p[i][0] - p[0][0], p[i][1] - p[0][1], p[i][2] - p[0][2]);
    Matrix3::from_columns(&[col(1), col(2), col(3)])
}

/// Linear-element stiffness `V ∇φ_i · ∇φ_j` from the inverse Jacobian.
pub fn fem_stiffness(p: &[Point3; 4]) -> [[f64; 4]; 4] {
    let j = edge_matrix(p);
    let vol = j.determinant().abs() / 6.0;
    let inv = j.try_inverse().expect("non-degenerate tet");
    // Rows of inv are ∇φ_1..∇φ_3; ∇φ_0 = −Σ.
    let mut grads = [Vector3::zeros(); 4];
    for k in 0..3 {
        grads[k + 1] = inv.row(k).transpose();
    }
    grads[0] = -(grads[1] + grads[2] + grads[3]);
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = vol * grads[a].dot(&grads[b]);
        }
    }
    k
}

/// Jittered structured box mesh with `n³` cubes over `[0, 1]³`, six tets each.
pub fn box_mesh(n: usize, jitter: f64, seed: u64) -> TetMesh {
    let mut rng = rng(seed);
    let id = |i: usize, j: usize, k: usize| (i * (n + 1) + j) * (n + 1) + k;
    let h = 1.0 / n as f64;
    let mut verts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let mut p = [i as f64 * h, j as f64 * h, k as f64 * h];
                for c in &mut p {
                    *c += rng.random_range(-jitter..=jitter) * h;
                }
                verts.push(p);
            }
        }
    }
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for o in orders {
                    let mut g = [i, j, k];
                    let mut t = [id(i, j, k), 0, 0, 0];
                    for (s, &ax) in o.iter().enumerate() {
                        g[ax] += 1;
                        t[s + 1] = id(g[0], g[1], g[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let mesh = TetMesh::new(verts, tets).unwrap();
    let (mesh, _) = validate_and_orient(&mesh).unwrap();
    normalize_mesh(&mesh).unwrap().0
}

pub fn to_dense(m: &letet_core::sparse::SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.n_rows(), m.n_cols());
    for r in 0..m.n_rows() {
        let (cols, vals) = m.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            d[(r, c)] += v;
        }
    }
    d
}

pub fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// `Σ_m T_m(L) X θ_m` with `T_m` evaluated on the spectrum of the symmetric `L`.
pub fn dense_chebyshev(l: &DMatrix<f64>, x: &DMatrix<f64>, thetas: &[DMatrix<f64>]) -> DMatrix<f64> {
    let eig = l.clone().symmetric_eigen();
    let mut out = DMatrix::zeros(x.nrows(), thetas[0].ncols());
    for (m, theta) in thetas.iter().enumerate() {
        let t = DMatrix::from_diagonal(&eig.eigenvalues.map(|lam| {
            let lam = lam.clamp(-1.0, 1.0);
            (m as f64 * lam.acos()).cos()
        }));
        let tm = &eig.eigenvectors * t * eig.eigenvectors.transpose();
        out += tm * x * theta;
    }
    out
}

fn affine(x: &DMatrix<f64>, lin: &Linear, store: &ParamStore) -> DMatrix<f64> {
    let mut y = x * to_nalgebra(store.value(lin.weight));
    if let Some(b) = lin.bias {
        let b = to_nalgebra(store.value(b));
        for mut row in y.row_iter_mut() {
            row += &b;
        }
    }
    y
}

fn mlp2(x: &DMatrix<f64>, m: &Mlp2, store: &ParamStore) -> DMatrix<f64> {
    let h = affine(x, &m.first, store).map(|v| v.max(0.0));
    affine(&h, &m.second, store)
}

/// Attention evaluated node by node over a dense adjacency mask.
pub fn dense_attention(
    layer: &PointTransformer,
    store: &ParamStore,
    tokens: &DMatrix<f64>,
    centers: &[Point3],
    adjacency: &[Vec<bool>],
) -> DMatrix<f64> {
    let n = tokens.nrows();
    let d = tokens.ncols();
    let q = affine(tokens, &layer.query, store);
    let k = affine(tokens, &layer.key, store);
    let v = affine(tokens, &layer.value, store);
    let mut out = tokens.clone();
    for i in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&j| adjacency[i][j]).collect();
        let mut scores = Vec::new();
        let mut values = Vec::new();
        for &j in &nbrs {
            let diff = DMatrix::from_fn(1, d, |_, c| q[(i, c)] - k[(j, c)]);
            let rel = DMatrix::from_fn(1, 3, |_, c| centers[j][c] - centers[i][c]);
            let pos = mlp2(&rel, &layer.delta, store);
            scores.push(mlp2(&diff, &layer.phi, store) + &pos);
            let val = DMatrix::from_fn(1, d, |_, c| v[(j, c)]);
            values.push(if layer.value_position { val + pos } else { val });
        }
        match layer.norm {
            AttentionNorm::PerChannel => {
                for c in 0..d {
                    let mx = scores.iter().map(|s| s[(0, c)]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = scores.iter().map(|s| (s[(0, c)] - mx).exp()).sum();
                    for (s, val) in scores.iter().zip(&values) {
                        out[(i, c)] += (s[(0, c)] - mx).exp() / z * val[(0, c)];
                    }
                }
            }
            AttentionNorm::PerEdge => {
                let means: Vec<f64> = scores.iter().map(|s| s.mean()).collect();
                let mx = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = means.iter().map(|m| (m - mx).exp()).sum();
                for (m, val) in means.iter().zip(&values) {
                    for c in 0..d {
                        out[(i, c)] += (m - mx).exp() / z * val[(0, c)];
                    }
                }
            }
        }
    }
    out
}

/// Random connected radius-style graph with self-loops on `n` nodes.
pub fn random_graph(n: usize, rng: &mut impl Rng) -> (RadiusGraph, Vec<Vec<bool>>) {
    let mut adj = vec![vec![false; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, a) in row.iter_mut().enumerate() {
            *a = i == j || rng.random_bool(0.5);
        }
    }
    // Symmetrize, as a radius graph is.
    for i in 0..n {
        for j in 0..i {
            let e = adj[i][j] || adj[j][i];
            adj[i][j] = e;
            adj[j][i] = e;
        }
    }
    let mut edges = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            if a {
                edges.push((j, i));
            }
        }
    }
    (RadiusGraph::from_edges(n, edges).unwrap(), adj)
}

/// Greedy posterior-variance maximization by explicit dense conditioning.
pub fn brute_force_gp(eig: &Eigenpairs, spec: &DiffusionKernelSpec, n: usize) -> Vec<usize> {
    let dim = eig.dim();
    let m = spec.n_eigenpairs.min(eig.len());
    let k = DMatrix::from_fn(dim, dim, |i, j| {
        (0..m)
            .map(|e| {
                let w: f64 = spec.scales.iter().map(|t| (-eig.values[e] * t).exp()).sum();
                w * eig.vectors[e][i] * eig.vectors[e][j]
            })
            .sum()
    });
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..n {
        let kss = DMatrix::from_fn(chosen.len(), chosen.len(), |a, b| k[(chosen[a], chosen[b])]);
        let inv = kss.clone().try_inverse();
        let mut best = None;
        let mut best_var = f64::NEG_INFINITY;
        for i in 0..dim {
            if chosen.contains(&i) {
                continue;
            }
            let var = match &inv {
                Some(inv) if !chosen.is_empty() => {
                    let kis = DMatrix::from_fn(1, chosen.len(), |_, b| k[(i, chosen[b])]);
                    {
                        let q: DMatrix<f64> = &kis * inv * kis.transpose();
                        k[(i, i)] - q[(0, 0)]
                    }
                }
                _ => k[(i, i)],
            };
            if var > best_var {
                best_var = var;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// Central finite difference of `f` at `x` in the direction of entry `i`.
pub fn central_difference(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
