mod support;

use letet_core::geom::Point3;
use letet_core::lbo::{LboBundle, LboConfig};
use letet_core::nn::{
    relative_positions, Adam, AdamConfig, AttentionNorm, ChebConv, Linear, Matrix, Mlp2, ParamGrads, ParamStore,
    PointTransformer, PointwiseMlp, Tape, Var,
};
use letet_core::tokenize::RadiusGraph;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use support::*;

fn random_matrix(rows: usize, cols: usize, r: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
}

fn random_centers(n: usize, r: &mut impl Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0)))
        .collect()
}

/// Perturbs biases away from zero so ReLU kinks and zero paths are exercised.
fn randomize(store: &mut ParamStore, r: &mut impl Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
}

#[test]
fn chebconv_matches_dense_polynomial() {
    let mut r = rng(1);
    for draw in 0..20u64 {
        let mesh = box_mesh(2, 0.2, draw);
        assert!(mesh.n_vertices() <= 50);
        let lbo = LboBundle::assemble(&mesh, LboConfig::default()).unwrap();
        let order = (draw % 5) as usize;
        let (d_in, d_out) = (1 + draw as usize % 3, 2);
        let mut store = ParamStore::new();
        let conv = ChebConv::new(&mut store, "c", d_in, d_out, order, &mut r);
        let x = random_matrix(mesh.n_vertices(), d_in, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = conv.forward(&mut tape, &store, xv, &lbo.scaled_laplacian).unwrap();
        let thetas: Vec<DMatrix<f64>> = conv.theta.iter().map(|&t| to_nalgebra(store.value(t))).collect();
        let want = dense_chebyshev(&to_dense(&lbo.scaled_laplacian), &to_nalgebra(&x), &thetas);
        let got = to_nalgebra(tape.value(y));
        assert!((got - &want).amax() < 1e-10 * want.amax().max(1.0), "draw {draw}");
    }
}

#[test]
fn attention_matches_dense_masked_attention() {
    let mut r = rng(2);
    for draw in 0..20u64 {
        let n = 1 + (draw as usize % 6);
        let dim = 3;
        let (graph, adj) = random_graph(n, &mut r);
        let centers = random_centers(n, &mut r);
        let norm = if draw % 2 == 0 {
            AttentionNorm::PerChannel
        } else {
            AttentionNorm::PerEdge
        };
        let mut store = ParamStore::new();
        let layer = PointTransformer::new(&mut store, "t", dim, norm, draw % 3 != 0, &mut r);
        randomize(&mut store, &mut r);
        let tokens = random_matrix(n, dim, &mut r);
        let mut tape = Tape::new();
        let tv = tape.constant(tokens.clone());
        let rel = relative_positions(&mut tape, &graph, &centers);
        let y = layer.forward(&mut tape, &store, tv, &graph, rel).unwrap();
        let want = dense_attention(&layer, &store, &to_nalgebra(&tokens), &centers, &adj);
        let got = to_nalgebra(tape.value(y));
        assert!((got - want).amax() < 1e-10, "draw {draw}");
    }
}

#[test]
fn attention_ignores_common_center_translation() {
    let mut r = rng(3);
    let n = 5;
    let (graph, _) = random_graph(n, &mut r);
    let centers = random_centers(n, &mut r);
    let shifted: Vec<Point3> = centers.iter().map(|c| [c[0] + 3.0, c[1] - 1.5, c[2] + 0.25]).collect();
    let mut store = ParamStore::new();
    let layer = PointTransformer::new(&mut store, "t", 4, AttentionNorm::PerChannel, true, &mut r);
    randomize(&mut store, &mut r);
    let tokens = random_matrix(n, 4, &mut r);
    let run = |c: &[Point3]| {
        let mut tape = Tape::new();
        let tv = tape.constant(tokens.clone());
        let rel = relative_positions(&mut tape, &graph, c);
        let y = layer.forward(&mut tape, &store, tv, &graph, rel).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(&centers), run(&shifted));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zeroed_attention_is_identity_residual() {
    let mut r = rng(4);
    let (graph, _) = random_graph(4, &mut r);
    let centers = random_centers(4, &mut r);
    let mut store = ParamStore::new();
    let layer = PointTransformer::new(&mut store, "t", 3, AttentionNorm::PerChannel, true, &mut r);
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).scale_assign(0.0);
    }
    let tokens = random_matrix(4, 3, &mut r);
    let mut tape = Tape::new();
    let tv = tape.constant(tokens.clone());
    let rel = relative_positions(&mut tape, &graph, &centers);
    let y = layer.forward(&mut tape, &store, tv, &graph, rel).unwrap();
    for (x, y) in tokens.data().iter().zip(tape.value(y).data()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

/// Checks every parameter of `store` (the input included, stored as a
/// parameter named `x`) against central differences of `sum(f · w)`.
fn finite_difference_check<'a>(
    store: &mut ParamStore,
    weights: &Matrix,
    f: impl Fn(&mut Tape<'a>, &ParamStore) -> Var,
) {
    let eval = |store: &ParamStore| {
        let mut tape = Tape::new();
        let y = f(&mut tape, store);
        tape.value(y)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let analytic = {
        let mut tape = Tape::new();
        let y = f(&mut tape, store);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(y, w).unwrap();
        let s = tape.sum(prod);
        tape.backward(s).unwrap().param_grads(store)
    };
    let h = 1e-6;
    for id in store.ids().collect::<Vec<_>>() {
        for e in 0..store.value(id).data().len() {
            let orig = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = orig + h;
            let up = eval(store);
            store.value_mut(id).data_mut()[e] = orig - h;
            let down = eval(store);
            store.value_mut(id).data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(err < 1e-4, "{}[{e}]: analytic {a} numeric {numeric}", store.name(id));
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut r = rng(100 + seed);
        let n = 6;

        let mut store = ParamStore::new();
        let x = store.add("x", random_matrix(n, 3, &mut r));
        let lin = Linear::new(&mut store, "lin", 3, 2, true, &mut r);
        randomize(&mut store, &mut r);
        let w = random_matrix(n, 2, &mut r);
        finite_difference_check(&mut store, &w, |t, s| {
            let xv = t.param(s, x);
            lin.forward(t, s, xv).unwrap()
        });

        let mut store = ParamStore::new();
        let x = store.add("x", random_matrix(n, 3, &mut r));
        let mlp = Mlp2::new(&mut store, "mlp", 3, 4, 2, &mut r);
        let pw = PointwiseMlp::new(&mut store, "pw", 2, 3, &mut r);
        randomize(&mut store, &mut r);
        let w = random_matrix(n, 3, &mut r);
        finite_difference_check(&mut store, &w, |t, s| {
            let xv = t.param(s, x);
            let h = mlp.forward(t, s, xv).unwrap();
            pw.forward(t, s, h).unwrap()
        });

        let mesh = box_mesh(1 + seed as usize % 2, 0.2, seed);
        let lbo = LboBundle::assemble(&mesh, LboConfig::default()).unwrap();
        let nv = mesh.n_vertices();
        let mut store = ParamStore::new();
        let x = store.add("x", random_matrix(nv, 2, &mut r));
        let conv = ChebConv::new(&mut store, "cheb", 2, 3, 3, &mut r);
        let w = random_matrix(nv, 3, &mut r);
        let lap = &lbo.scaled_laplacian;
        finite_difference_check(&mut store, &w, |t, s| {
            let xv = t.param(s, x);
            conv.forward(t, s, xv, lap).unwrap()
        });

        let (graph, _) = random_graph(5, &mut r);
        let centers = random_centers(5, &mut r);
        for norm in [AttentionNorm::PerChannel, AttentionNorm::PerEdge] {
            let mut store = ParamStore::new();
            let x = store.add("x", random_matrix(5, 3, &mut r));
            let layer = PointTransformer::new(&mut store, "pt", 3, norm, true, &mut r);
            randomize(&mut store, &mut r);
            let w = random_matrix(5, 3, &mut r);
            let g: &RadiusGraph = &graph;
            finite_difference_check(&mut store, &w, |t, s| {
                let xv = t.param(s, x);
                let rel = relative_positions(t, g, &centers);
                layer.forward(t, s, xv, g, rel).unwrap()
            });
        }
    }
}

#[test]
fn adam_three_steps_closed_form() {
    let cfg = AdamConfig {
        lr: 0.1,
        weight_decay: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut store = ParamStore::new();
    let id = store.add("w", Matrix::from_rows(&[&[0.5]]));
    let mut adam = Adam::new(cfg, &store);
    let gs = [0.3, -0.7, 1.1];
    let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for (t, g) in gs.iter().enumerate() {
        adam.step(
            &mut store,
            &ParamGrads::from_matrices(vec![Matrix::from_rows(&[&[*g]])]),
        )
        .unwrap();
        let g = g + cfg.weight_decay * p;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let k = (t + 1) as i32;
        p -= cfg.lr * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + cfg.eps);
        assert!((store.value(id).get(0, 0) - p).abs() < 1e-14, "step {k}");
    }
    // A constant gradient without decay moves each step by lr·g/(|g|+eps).
    let mut store = ParamStore::new();
    let id = store.add("w", Matrix::from_rows(&[&[0.0]]));
    let mut adam = Adam::new(
        AdamConfig {
            weight_decay: 0.0,
            ..cfg
        },
        &store,
    );
    let g = ParamGrads::from_matrices(vec![Matrix::from_rows(&[&[2.0]])]);
    for _ in 0..3 {
        adam.step(&mut store, &g).unwrap();
    }
    assert!((store.value(id).get(0, 0) + 3.0 * 0.1 * 2.0 / (2.0 + 1e-8)).abs() < 1e-12);
}

#[test]
fn adam_leaves_params_on_non_finite_gradient() {
    let mut store = ParamStore::new();
    store.add("w", Matrix::from_rows(&[&[1.0, 2.0]]));
    let before = store.clone();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let g = ParamGrads::from_matrices(vec![Matrix::from_rows(&[&[f64::NAN, 0.0]])]);
    assert!(adam.step(&mut store, &g).is_err());
    assert_eq!(store, before);
    assert_eq!(adam.steps(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_permutation_equivariant(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let n = 1 + (seed as usize % 6);
        let (graph, adj) = random_graph(n, &mut r);
        let centers = random_centers(n, &mut r);
        let mut store = ParamStore::new();
        let layer = PointTransformer::new(&mut store, "t", 2, AttentionNorm::PerChannel, true, &mut r);
        randomize(&mut store, &mut r);
        let tokens = random_matrix(n, 2, &mut r);
        // Reverse node order.
        let p = |i: usize| n - 1 - i;
        let mut edges = Vec::new();
        for (i, row) in adj.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a { edges.push((p(j), p(i))); }
            }
        }
        let g2 = RadiusGraph::from_edges(n, edges).unwrap();
        let c2: Vec<Point3> = (0..n).map(|i| centers[p(i)]).collect();
        let t2 = Matrix::from_vec(n, 2, (0..n).flat_map(|i| tokens.row(p(i)).to_vec()).collect());
        let run = |g: &RadiusGraph, c: &[Point3], t: &Matrix| {
            let mut tape = Tape::new();
            let tv = tape.constant(t.clone());
            let rel = relative_positions(&mut tape, g, c);
            let y = layer.forward(&mut tape, &store, tv, g, rel).unwrap();
            tape.value(y).clone()
        };
        let a = run(&graph, &centers, &tokens);
        let b = run(&g2, &c2, &t2);
        for i in 0..n {
            for c in 0..2 {
                prop_assert!((a.get(i, c) - b.get(p(i), c)).abs() < 1e-12);
            }
        }
    }
}
