use letet_core::geom;
use letet_core::model::RiskStratum;
use letet_core::synth::{
    apply_class_deformation, bump_magnitude, dent_center, generate_ball_mesh, generate_dataset, generate_sample,
    SynthSpec,
};
use proptest::prelude::*;

fn quick(seed: u64) -> SynthSpec {
    SynthSpec {
        n_per_class: 3,
        grid_resolution: 6,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn datasets_are_reproducible() {
    let a = generate_dataset(&quick(3)).unwrap();
    let b = generate_dataset(&quick(3)).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&quick(4)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn labels_alternate_and_strata_follow_the_band() {
    let spec = quick(1);
    let data = generate_dataset(&spec).unwrap();
    assert_eq!(data.len(), 6);
    let (lo, hi) = spec.medium_band().unwrap();
    for (i, s) in data.iter().enumerate() {
        assert_eq!(s.label, (i % 2) as u8);
        let want = if s.biomarker < lo {
            RiskStratum::Low
        } else if s.biomarker <= hi {
            RiskStratum::Medium
        } else {
            RiskStratum::High
        };
        assert_eq!(s.stratum, want);
    }
}

#[test]
fn excessive_amplitude_is_rejected() {
    let spec = SynthSpec {
        bump_amplitude: 0.9,
        ..quick(0)
    };
    assert!(generate_dataset(&spec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn masks_mark_displaced_vertices(seed in 0u64..10_000, index in 0u64..50) {
        let spec = quick(seed);
        let base = generate_ball_mesh(&spec).unwrap();
        let negative = generate_sample(&spec, &base, index, 0).unwrap();
        prop_assert!(negative.mask.iter().all(|&m| !m));
        let positive = generate_sample(&spec, &base, index, 1).unwrap();
        prop_assert_eq!(positive.mask.len(), positive.mesh.n_vertices());
        let center = dent_center(&base, &spec);
        for (v, &m) in base.vertices().iter().zip(&positive.mask) {
            prop_assert_eq!(m, bump_magnitude(v, &center, &spec) > 0.1 * spec.bump_amplitude);
        }
        prop_assert!(positive.mask.iter().any(|&m| m));
        // The dent center sits on the surface of the unit ball.
        prop_assert!((geom::norm(&center) - 1.0).abs() < 0.2);
    }

    #[test]
    fn deformation_without_noise_moves_only_inward(seed in 0u64..10_000) {
        let spec = SynthSpec { noise_scale: 1e-12, ..quick(seed) };
        let base = generate_ball_mesh(&spec).unwrap();
        let (moved, mask) = apply_class_deformation(&base, 1, &spec, 0).unwrap();
        for ((a, b), &m) in base.vertices().iter().zip(moved.vertices()).zip(&mask) {
            prop_assert!(geom::norm(b) <= geom::norm(a) + 1e-9);
            if m {
                prop_assert!(geom::norm(a) - geom::norm(b) > 0.1 * spec.bump_amplitude - 1e-9);
            }
        }
    }
}
