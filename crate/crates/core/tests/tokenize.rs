mod support;

use letet_core::geom::Point3;
use letet_core::landmarks::{LandmarkMethod, LandmarkSet};
use letet_core::nn::{Matrix, Tape};
use letet_core::tokenize::{assign_patches, build_radius_graph, pool_patch_features};
use proptest::prelude::*;
use rand::Rng;
use std::collections::BTreeSet;
use support::*;

fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0)))
        .collect()
}

fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patches_are_nearest_landmarks(seed in 0u64..10_000, n in 5usize..80, k in 1usize..5) {
        let pts = random_points(n, seed);
        let k = k.min(n);
        let idx: Vec<usize> = (0..k).map(|i| i * n / k).collect();
        let set = LandmarkSet::from_indices(&pts, idx.clone(), LandmarkMethod::Fps, 0).unwrap();
        let patches = assign_patches(&pts, &set).unwrap();
        for (v, p) in pts.iter().enumerate() {
            let best = (0..k).map(|s| d2(p, &pts[idx[s]])).fold(f64::INFINITY, f64::min);
            let got = patches.labels()[v];
            prop_assert!(d2(p, &pts[idx[got]]) <= best);
        }
        // Every landmark owns itself, sizes sum to N.
        for (s, &i) in idx.iter().enumerate() {
            prop_assert_eq!(patches.labels()[i], s);
        }
        prop_assert_eq!(patches.sizes().iter().sum::<usize>(), n);
    }

    #[test]
    fn radius_graph_matches_brute_force(seed in 0u64..10_000, n in 1usize..30, radius in 0.05f64..2.0) {
        let pts = random_points(n, seed);
        let g = build_radius_graph(&pts, radius).unwrap();
        let got: BTreeSet<(usize, usize)> = g.edges().collect();
        let mut want = BTreeSet::new();
        for s in 0..n {
            for t in 0..n {
                if s == t || d2(&pts[s], &pts[t]).sqrt() <= radius {
                    want.insert((s, t));
                }
            }
        }
        prop_assert_eq!(got.len(), g.n_edges());
        prop_assert_eq!(got, want);
    }
}

#[test]
fn pooled_tokens_are_patch_means() {
    let pts = random_points(40, 3);
    let set = LandmarkSet::from_indices(&pts, vec![0, 7, 21], LandmarkMethod::Fps, 0).unwrap();
    let patches = assign_patches(&pts, &set).unwrap();
    let feats = Matrix::from_vec(40, 2, (0..80).map(|i| (i as f64 * 0.37).sin()).collect());
    let mut tape = Tape::new();
    let x = tape.constant(feats.clone());
    let pooled = pool_patch_features(&mut tape, x, &patches).unwrap();
    let out = tape.value(pooled);
    for s in 0..3 {
        let members: Vec<usize> = (0..40).filter(|&v| patches.labels()[v] == s).collect();
        for c in 0..2 {
            let mean = members.iter().map(|&v| feats.get(v, c)).sum::<f64>() / members.len() as f64;
            assert!((out.get(s, c) - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn nonpositive_radius_is_rejected() {
    assert!(build_radius_graph(&random_points(3, 0), 0.0).is_err());
}
