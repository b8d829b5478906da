mod common;

use fuselab_core::fusion::{fuse, interpolate_pair, simplex_coordinates, simplex_grid, FusionWeights};
use fuselab_core::{Error, Rng};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn invariants_hold_on_random_sets(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = Rng::new(seed, 0);
        let models = common::random_aligned(&mut rng, n);
        let alphas = common::random_weights(&mut rng, n);
        let perm = rng.permutation(n);
        if let Err(e) = common::check_fusion_algebra(&models, &alphas, &perm) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn fused_values_stay_in_the_hull(seed in any::<u64>(), n in 2usize..5) {
        let mut rng = Rng::new(seed, 1);
        let models = common::random_aligned(&mut rng, n);
        let w = FusionWeights::new(common::random_weights(&mut rng, n)).unwrap();
        let fused = fuse(&models, &w).unwrap();
        for (i, v) in fused.flat().into_iter().enumerate() {
            let col: Vec<f64> = models.iter().map(|m| m.flat()[i]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn weights_off_the_simplex_are_rejected(a in -1.0f64..2.0, b in -1.0f64..2.0) {
        let ok = a >= 0.0 && b >= 0.0 && (a + b - 1.0).abs() <= 1e-9;
        prop_assert_eq!(FusionWeights::new(vec![a, b]).is_ok(), ok);
    }
}

#[test]
fn interpolation_endpoints_are_the_models() {
    let mut rng = Rng::new(4, 0);
    let m = common::random_aligned(&mut rng, 2);
    let pts = interpolate_pair(&m[0], &m[1], 7).unwrap();
    assert_eq!(pts.len(), 7);
    assert_eq!(pts[0].params, m[0]);
    assert_eq!(pts[6].params, m[1]);
    assert_eq!(pts[3].coordinates, vec![0.5, 0.5]);
    for w in pts.windows(2) {
        assert!(w[0].coordinates[1] < w[1].coordinates[1]);
    }
}

#[test]
fn simplex_grid_matches_coordinates() {
    let mut rng = Rng::new(5, 0);
    let m = common::random_aligned(&mut rng, 3);
    let grid = simplex_grid([&m[0], &m[1], &m[2]], 4).unwrap();
    let coords = simplex_coordinates(4);
    assert_eq!(grid.len(), 15);
    for (p, c) in grid.iter().zip(&coords) {
        assert_eq!(&p.coordinates, c);
        let direct = fuse(&m, &FusionWeights::new(c.clone()).unwrap()).unwrap();
        assert_eq!(p.params, direct);
    }
}

#[test]
fn mismatched_counts_and_manifests_fail() {
    let mut rng = Rng::new(6, 0);
    let m = common::random_aligned(&mut rng, 2);
    assert!(matches!(
        fuse(&m, &FusionWeights::uniform(3).unwrap()),
        Err(Error::InvalidWeights(_))
    ));
    let mut other = Rng::new(7, 0);
    let stranger = loop {
        let s = common::random_aligned(&mut other, 1).remove(0);
        if !s.is_aligned(&m[0]) {
            break s;
        }
    };
    assert!(fuse(&[&m[0], &stranger], &FusionWeights::uniform(2).unwrap()).is_err());
}
