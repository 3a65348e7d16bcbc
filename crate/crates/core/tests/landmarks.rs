mod support;

use letet_core::eigen::truncated_eigenpairs;
use letet_core::landmarks::{coverage_radius, fps_select, gp_greedy_select, DiffusionKernelSpec};
use letet_core::lbo::{assemble_lumped_mass, assemble_stiffness, MassMode};
use letet_core::mesh::TetMesh;
use letet_core::synth::{generate_ball_mesh, SynthSpec};
use proptest::prelude::*;
use support::*;

fn eigenpairs(mesh: &TetMesh, m: usize) -> letet_core::eigen::Eigenpairs {
    let k = assemble_stiffness(mesh).unwrap();
    let d = assemble_lumped_mass(mesh, MassMode::Quarter).unwrap();
    truncated_eigenpairs(&k, &d, m).unwrap()
}

#[test]
fn gp_greedy_matches_dense_conditioning() {
    for seed in 0..20u64 {
        let n = 2 + (seed as usize % 3);
        let mesh = box_mesh(n, 0.2, seed);
        assert!(mesh.n_vertices() <= 200);
        let spec = DiffusionKernelSpec {
            n_eigenpairs: 24.min(mesh.n_vertices()),
            ..DiffusionKernelSpec::default()
        };
        let eig = eigenpairs(&mesh, spec.n_eigenpairs);
        let picks = 12.min(spec.n_eigenpairs);
        let ours = gp_greedy_select(mesh.vertices(), &eig, &spec, picks).unwrap();
        let oracle = brute_force_gp(&eig, &spec, picks);
        assert_eq!(ours.landmarks.indices(), &oracle[..], "seed {seed}");
    }
}

#[test]
fn gp_variances_are_non_increasing() {
    let mesh = box_mesh(3, 0.2, 5);
    let spec = DiffusionKernelSpec {
        n_eigenpairs: 32,
        ..DiffusionKernelSpec::default()
    };
    let eig = eigenpairs(&mesh, 32);
    let sel = gp_greedy_select(mesh.vertices(), &eig, &spec, 20).unwrap();
    for w in sel.variances.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", sel.variances);
    }
}

#[test]
fn selecting_every_vertex_leaves_no_residual() {
    let mesh = box_mesh(2, 0.2, 1);
    let n = mesh.n_vertices();
    let spec = DiffusionKernelSpec {
        n_eigenpairs: n,
        scales: vec![0.001, 0.01, 0.1],
    };
    let eig = eigenpairs(&mesh, n);
    let sel = gp_greedy_select(mesh.vertices(), &eig, &spec, n).unwrap();
    let mut idx = sel.landmarks.indices().to_vec();
    idx.sort_unstable();
    assert_eq!(idx, (0..n).collect::<Vec<_>>());
    let worst = sel.residual_variances.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn fps_coverage_is_monotone_on_ball() {
    let mesh = generate_ball_mesh(&SynthSpec::default()).unwrap();
    let mut last = f64::INFINITY;
    for n in 2..=64 {
        let set = fps_select(mesh.vertices(), n, 0).unwrap();
        let r = coverage_radius(mesh.vertices(), set.indices());
        assert!(r <= last + 1e-12, "n={n}: {r} > {last}");
        last = r;
    }
    assert!(last < 0.35, "coverage radius at 64 landmarks: {last}");
}

#[test]
fn fps_rejects_bad_counts() {
    let mesh = box_mesh(1, 0.0, 0);
    assert!(fps_select(mesh.vertices(), 0, 0).is_err());
    assert!(fps_select(mesh.vertices(), mesh.n_vertices() + 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fps_prefix_property(seed in 0u64..500, n in 2usize..20) {
        let mesh = box_mesh(3, 0.25, seed);
        let small = fps_select(mesh.vertices(), n, 0).unwrap();
        let large = fps_select(mesh.vertices(), n + 5, 0).unwrap();
        prop_assert_eq!(small.indices(), &large.indices()[..n]);
        let mut uniq = large.indices().to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), n + 5);
    }
}
