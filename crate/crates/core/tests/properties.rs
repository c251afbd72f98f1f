use cclab_core::geodesy::{gauge_dist_heis, gauge_heis, gauge_heis_eps, heis_mul};
use cclab_core::rng::{derive, stream};
use cclab_core::Lattice;
use proptest::prelude::*;
use rand::Rng;

fn pt() -> impl Strategy<Value = [f64; 3]> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn group_law_is_associative(a in pt(), b in pt(), c in pt()) {
        let l = heis_mul(&heis_mul(&a, &b), &c);
        let r = heis_mul(&a, &heis_mul(&b, &c));
        for k in 0..3 {
            prop_assert!((l[k] - r[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn gauge_distance_is_left_invariant(g in pt(), x in pt(), y in pt(), eps in 0.0..1.5f64) {
        let d = gauge_dist_heis(&x, &y, eps);
        let dg = gauge_dist_heis(&heis_mul(&g, &x), &heis_mul(&g, &y), eps);
        prop_assert!((d - dg).abs() < 1e-9 * (1.0 + d));
    }

    #[test]
    fn gauge_is_homogeneous(x in pt(), lam in 0.05..5.0f64) {
        let y = [lam * x[0], lam * x[1], lam * lam * x[2]];
        prop_assert!((gauge_heis(&y) - lam * gauge_heis(&x)).abs() < 1e-12 * (1.0 + lam));
    }

    #[test]
    fn smaller_eps_never_shrinks_the_gauge(x in pt(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        prop_assert!(gauge_heis_eps(&x, hi) <= gauge_heis_eps(&x, lo) + 1e-15);
    }

    #[test]
    fn lattice_indexing_round_trips(nx in 3usize..9, ny in 3usize..9, nz in 3usize..9, pick in 0.0..1.0f64) {
        let lat = Lattice::new(&[-1.0, 0.0, 2.0], &[1.0, 3.0, 2.5], &[nx, ny, nz], &[false; 3]).unwrap();
        let i = ((lat.len() - 1) as f64 * pick) as usize;
        let mut m = [0; 3];
        lat.multi(i, &mut m);
        prop_assert_eq!(lat.index(&m), i);
        prop_assert_eq!(lat.nearest(&lat.point(i)), Some(i));
    }

    #[test]
    fn interpolation_reproduces_affine_data(x in [-0.9..0.9f64, -0.9..0.9f64], a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let lat = Lattice::uniform(&[-1.0, -1.0], &[1.0, 1.0], 0.25, &[false; 2]).unwrap();
        let f = |p: &[f64]| 0.5 + a * p[0] + b * p[1];
        let values: Vec<f64> = (0..lat.len()).map(|i| f(&lat.point(i))).collect();
        let v = lat.interpolate(&values, &x).unwrap();
        prop_assert!((v - f(&x)).abs() < 1e-12);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), id in 0u64..1000) {
        let a: Vec<u64> = stream(seed, id).random_iter().take(4).collect();
        let b: Vec<u64> = stream(seed, id).random_iter().take(4).collect();
        let c: Vec<u64> = stream(seed, id + 1).random_iter().take(4).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
        prop_assert_ne!(derive(seed, "a"), derive(seed, "b"));
    }
}
