use std::sync::Arc;

use cclab_core::norms::*;
use cclab_core::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

fn grid9() -> (Lattice, Vec<f64>) {
    let lat = Lattice::new(&[0.0, 0.0], &[1.0, 1.0], &[9, 9], &[false; 2]).unwrap();
    let times: Vec<f64> = (0..9).map(|k| k as f64 / 64.0).collect();
    (lat, times)
}

#[test]
fn holder_constant_and_homogeneity() {
    let (lat, times) = grid9();
    let m = SpaceMetric::Euclidean(lat.clone());
    let c = SpaceTimeField::sample(&lat, &times, |_, _| 2.0);
    let r = holder_norm(&c, 0.5, &m, 1000, 1, None).unwrap();
    assert_eq!(r.seminorm, 0.0);
    assert_eq!(r.sup_norm, 2.0);
    let u = SpaceTimeField::sample(&lat, &times, |x, t| (3.0 * x[0]).sin() * x[1] + t * t);
    let a = holder_norm(&u, 0.4, &m, 1000, 7, None).unwrap();
    let b = holder_norm(&u.scale(-4.0), 0.4, &m, 1000, 7, None).unwrap();
    assert_eq!(b.total, 4.0 * a.total);
    let b = holder_norm(&u.scale(0.3), 0.4, &m, 1000, 7, None).unwrap();
    assert!((b.total - 0.3 * a.total).abs() <= 1e-12 * a.total);
}

#[test]
fn holder_of_x1_matches_exhaustive_enumeration() {
    let (lat, times) = grid9();
    let m = SpaceMetric::Euclidean(lat.clone());
    let u = SpaceTimeField::sample(&lat, &times, |x, _| x[0]);
    let mut oracle: f64 = 0.0;
    for i in 0..lat.len() {
        for j in 0..lat.len() {
            for (s, &ts) in times.iter().enumerate() {
                for &tr in &times[s..] {
                    let (x, y) = (lat.point(i), lat.point(j));
                    let dx = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
                    let d = dx.max((ts - tr).abs().sqrt());
                    if d > 0.0 {
                        oracle = oracle.max((x[0] - y[0]).abs() / d.sqrt());
                    }
                }
            }
        }
    }
    assert!((oracle - 1.0).abs() < 1e-12);
    let all = holder_norm(&u, 0.5, &m, 1_000_000, 3, None).unwrap();
    assert!((all.seminorm - oracle).abs() < 1e-12);
    let (p, q) = all.arg_pair.unwrap();
    assert_eq!((p.x[0] - q.x[0]).abs(), 1.0);
    let sampled = holder_norm(&u, 0.5, &m, 1000, 3, None).unwrap();
    assert!(sampled.seminorm <= oracle + 1e-12 && sampled.seminorm >= 0.9 * oracle, "{}", sampled.seminorm);
}

#[test]
fn holder_is_monotone_in_sample_count() {
    let lat = Lattice::new(&[0.0, 0.0], &[1.0, 1.0], &[21, 21], &[false; 2]).unwrap();
    let m = SpaceMetric::Euclidean(lat.clone());
    let u = SpaceTimeField::sample(&lat, &[0.0, 0.01, 0.02], |x, t| (5.0 * x[0] * x[1]).cos() + t);
    let mut prev = 0.0;
    for n in [1000, 2000, 4000, 8000] {
        let r = holder_norm(&u, 0.5, &m, n, 11, None).unwrap();
        assert!(r.seminorm >= prev);
        prev = r.seminorm;
    }
}

#[test]
fn parabolic_distance_on_the_lattice_graph() {
    let e2 = make_eps_frame(Arc::new(build_builtin_frame(Builtin::Euclidean(2))), 0.0).unwrap();
    let lat = Lattice::centered(&[0.0; 2], &[10, 10], &[0.1, 0.1], &[false; 2]).unwrap();
    let m = SpaceMetric::lattice(&e2, &lat).unwrap();
    let p = ParabolicPoint { x: vec![-0.3, 0.2], t: 0.0 };
    let q = ParabolicPoint { x: vec![0.4, -0.1], t: 0.01 };
    let d = parabolic_dist(&m, &p, &q).unwrap();
    let exact = (0.49f64 + 0.09).sqrt();
    assert!(d >= exact - 1e-9 && d <= exact * 1.03, "{d} vs {exact}");
}

fn h1(eps: f64) -> EpsFrame {
    make_eps_frame(Arc::new(build_builtin_frame(Builtin::Heisenberg1)), eps).unwrap()
}

#[test]
fn sobolev_examples() {
    let lat = Lattice::centered(&[0.0; 3], &[10, 10, 10], &[0.05, 0.05, 0.05], &[false; 3]).unwrap();
    let ef = h1(0.5);
    let zero = vec![0.0; lat.len()];
    assert_eq!(sobolev_norm(&zero, 2, 2.0, &ef, &lat).unwrap().total, 0.0);
    let u = lat.sample(|x| x[0]);
    let r = sobolev_norm(&u, 1, 2.0, &ef, &lat).unwrap();
    let vol = r.nodes as f64 * lat.cell_volume();
    for (word, v) in &r.terms {
        match word.as_slice() {
            [0] => assert!((v - vol.sqrt()).abs() < 1e-12),
            [_] => assert!(v.abs() < 1e-12, "{word:?} {v}"),
            _ => {}
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let a: Vec<f64> = (0..lat.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..lat.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        for k in [1, 2] {
            let (na, nb, ns) = (
                sobolev_norm(&a, k, 2.0, &ef, &lat).unwrap().total,
                sobolev_norm(&b, k, 2.0, &ef, &lat).unwrap().total,
                sobolev_norm(&s, k, 2.0, &ef, &lat).unwrap().total,
            );
            assert!(ns <= na + nb + 1e-12 * (na + nb));
        }
    }
    let tiny = Lattice::centered(&[0.0; 3], &[1, 1, 1], &[0.1; 3], &[false; 3]).unwrap();
    let u = vec![1.0; tiny.len()];
    assert!(matches!(sobolev_norm(&u, 2, 2.0, &ef, &tiny), Err(LabError::OutOfDomain(_))));
}

fn schauder(eps: f64, h: f64, w: &(dyn Fn(&[f64], f64) -> f64 + Sync)) -> SchauderReport {
    let ef = h1(eps);
    let half = (0.5 / h).round() as usize;
    let lat = Lattice::centered(&[0.0; 3], &[half; 3], &[h; 3], &[false; 3]).unwrap();
    let metric = SpaceMetric::lattice(&ef, &lat).unwrap();
    let a = |_: &[f64]| DMatrix::identity(3, 3);
    let prob = SchauderProblem {
        w,
        a: &a,
        times: vec![0.0, 0.02, 0.04],
        alpha: 0.5,
        k: (vec![-0.2; 3], vec![0.2; 3]),
        k_delta: (vec![-0.3; 3], vec![0.3; 3]),
        pairs: 2000,
        seed: 9,
    };
    schauder_ratio(&ef, &metric, &prob).unwrap()
}

#[test]
fn schauder_ratio_examples() {
    let affine = schauder(0.5, 0.1, &|x: &[f64], _| x[0]);
    assert!(affine.ratio <= 0.1, "{affine:?}");
    let quad = |x: &[f64], _: f64| x[0] * x[0] + x[1] * x[1];
    let ratios: Vec<f64> = [0.05, 0.1, 0.25, 0.5, 1.0].iter().map(|&e| schauder(e, 0.1, &quad).ratio).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
    assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
    assert!(sd / mean <= 0.6, "{ratios:?}");
    let wave = |x: &[f64], t: f64| (-t).exp() * (2.0 * x[0]).sin() * (1.5 * x[1]).cos() + 0.5 * x[2] * x[2];
    let (c, f) = (schauder(0.5, 0.1, &wave).ratio, schauder(0.5, 0.05, &wave).ratio);
    assert!((f / c - 1.0).abs() <= 0.2, "coarse {c} fine {f}");
}
