use std::f64::consts::PI;
use std::sync::Arc;

use cclab_core::geodesy::ControlOptions;
use cclab_core::heat::*;
use cclab_core::*;

fn frame(b: Builtin, eps: f64) -> EpsFrame {
    make_eps_frame(Arc::new(build_builtin_frame(b)), eps).unwrap()
}

fn gauss(x: &[f64], t: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-r2 / (4.0 * t)).exp() / (4.0 * PI * t).powf(x.len() as f64 / 2.0)
}

#[test]
fn euclidean_kernel_matches_the_gaussian() {
    let ef = frame(Builtin::Euclidean(1), 0.0);
    let lat = Lattice::centered(&[0.0], &[300], &[0.01], &[false]).unwrap();
    let opts = FdOptions { snapshots: vec![0.02, 0.05], ..Default::default() };
    let k = heat_fd(&ef, &identity(1), &lat, &[0.0], 0.1, &opts).unwrap();
    let s = k.snapshot(0.1);
    let peak = gauss(&[0.0], 0.1);
    let err = (0..lat.len()).map(|i| (k.values[s][i] - gauss(&lat.point(i), 0.1)).abs()).fold(0.0, f64::max);
    assert!(err / peak <= 0.02, "sup error {}", err / peak);
    for m in &k.mass {
        assert!((0.99..=1.01).contains(m), "mass {m}");
    }
    assert!(k.values.iter().flatten().all(|v| *v >= 0.0));
}

#[test]
fn explicit_step_above_the_bound_is_rejected() {
    let ef = frame(Builtin::Euclidean(1), 0.0);
    let lat = Lattice::centered(&[0.0], &[50], &[0.02], &[false]).unwrap();
    let opts = FdOptions { dt: Some(1e-3), ..Default::default() };
    assert!(matches!(heat_fd(&ef, &identity(1), &lat, &[0.0], 0.01, &opts), Err(LabError::StabilityError { .. })));
}

#[test]
fn coefficient_matrix_validation() {
    use nalgebra::DMatrix;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]);
    assert!(CoeffMatrix::new(a, 2.0, 2).is_ok());
    let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
    assert!(CoeffMatrix::new(skew, 2.0, 2).is_err());
    let flat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.1]);
    assert!(CoeffMatrix::new(flat, 2.0, 2).is_err());
}

#[test]
fn non_identity_coefficients_on_the_plane() {
    use nalgebra::DMatrix;
    let ef = frame(Builtin::Euclidean(2), 0.0);
    let lat = Lattice::centered(&[0.0; 2], &[60, 60], &[0.02, 0.02], &[false; 2]).unwrap();
    let a = CoeffMatrix::new(DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.75]), 2.0, 2).unwrap();
    let k = heat_fd(&ef, &a, &lat, &[0.0, 0.0], 0.05, &FdOptions::default()).unwrap();
    let s = k.snapshot(0.05);
    let exact = |x: &[f64]| (-(x[0] * x[0] / 1.5 + x[1] * x[1] / 0.75) / (4.0 * 0.05)).exp() / (4.0 * PI * 0.05 * (1.5f64 * 0.75).sqrt());
    let peak = exact(&[0.0, 0.0]);
    let err = (0..lat.len()).map(|i| (k.values[s][i] - exact(&lat.point(i))).abs()).fold(0.0, f64::max);
    assert!(err / peak < 0.03, "{}", err / peak);
}

#[test]
fn heisenberg_kernel_is_inversion_symmetric() {
    let ef = frame(Builtin::Heisenberg1, 1.0);
    let lat = h1_heat_lattice(1.0, 0.05, 0.1, 40).unwrap();
    let k = heat_fd(&ef, &identity(3), &lat, &[0.0; 3], 0.05, &FdOptions::default()).unwrap();
    let s = k.snapshot(0.05);
    let peak = k.values[s].iter().cloned().fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for i in 0..lat.len() {
        let x = lat.point(i);
        let m: Vec<f64> = x.iter().map(|v| -v).collect();
        let j = lat.nearest(&m).unwrap();
        worst = worst.max((k.values[s][i] - k.values[s][j]).abs());
    }
    assert!(worst / peak <= 0.01, "{}", worst / peak);
    assert!(k.values[s].iter().all(|v| *v >= 0.0));
}

/// Gaussian averaged over the square cell of side h around x.
fn cell_gauss(x: &[f64], h: f64, t: f64) -> f64 {
    let q = 16;
    let mut acc = 0.0;
    for a in 0..q {
        for b in 0..q {
            let p = [x[0] + h * ((a as f64 + 0.5) / q as f64 - 0.5), x[1] + h * ((b as f64 + 0.5) / q as f64 - 0.5)];
            acc += gauss(&p, t);
        }
    }
    acc / (q * q) as f64
}

#[test]
fn stochastic_kernel_on_the_plane() {
    let ef = frame(Builtin::Euclidean(2), 0.0);
    let lat = Lattice::centered(&[0.0; 2], &[10, 10], &[0.2, 0.2], &[false; 2]).unwrap();
    let t = 0.04;
    let k = heat_mc(&ef, &lat, &[0.0, 0.0], t, &McOptions { paths: 100_000, seed: 21, ..Default::default() }).unwrap();
    let s = k.snapshot(t);
    let peak = cell_gauss(&[0.0, 0.0], 0.2, t);
    let err = (0..lat.len()).map(|i| (k.values[s][i] - cell_gauss(&lat.point(i), 0.2, t)).abs()).fold(0.0, f64::max);
    assert!(err / peak <= 0.05, "{}", err / peak);
    let again = heat_mc(&ef, &lat, &[0.0, 0.0], t, &McOptions { paths: 100_000, seed: 21, ..Default::default() }).unwrap();
    assert_eq!(k.values, again.values);
}

#[test]
fn vertical_spread_grows_linearly_at_eps_zero() {
    let ef = frame(Builtin::Heisenberg1, 0.0);
    let lat = Lattice::centered(&[0.0; 3], &[30, 30, 60], &[0.05, 0.05, 0.02], &[false; 3]).unwrap();
    let opts = McOptions { paths: 100_000, seed: 4, snapshots: vec![0.05], ..Default::default() };
    let k = heat_mc(&ef, &lat, &[0.0; 3], 0.1, &opts).unwrap();
    let cv = lat.cell_volume();
    let sd = |s: usize| -> f64 {
        let m: f64 = (0..lat.len()).map(|i| k.values[s][i] * cv).sum();
        ((0..lat.len()).map(|i| k.values[s][i] * cv * lat.point(i)[2].powi(2)).sum::<f64>() / m).sqrt()
    };
    let (a, b) = (sd(k.snapshot(0.05)), sd(k.snapshot(0.1)));
    // E x3² = 4t² for the flow along √2 X1, √2 X2
    assert!((a / 0.1 - 1.0).abs() < 0.1 && (b / 0.2 - 1.0).abs() < 0.1, "sd {a} {b}");
    assert!((b / a - 2.0).abs() < 0.4, "ratio {}", b / a);
}

#[test]
fn euclidean_gaussian_fit() {
    let ef = frame(Builtin::Euclidean(2), 0.0);
    let lat = Lattice::centered(&[0.0; 2], &[80, 80], &[0.02, 0.02], &[false; 2]).unwrap();
    let t = 0.1;
    let k = heat_fd(&ef, &identity(2), &lat, &[0.0, 0.0], t, &FdOptions::default()).unwrap();
    let d: Vec<f64> = (0..lat.len()).map(|i| lat.point(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let fit = gaussian_fit(&k, k.snapshot(t), &d, PI * t, 0.0).unwrap();
    assert!((fit.rate - 0.25).abs() < 0.0125, "{fit:?}");
    assert!((fit.c_exp_upper / 0.25 - 1.0).abs() <= 0.2 && (fit.c_exp_lower / 0.25 - 1.0).abs() <= 0.2);
    assert!(fit.c_upper / fit.c_lower <= 1.5 && fit.c_lower <= fit.c_upper, "{fit:?}");
    assert!(fit.bracketed >= 0.98);
    let few = vec![f64::INFINITY; lat.len()];
    assert!(matches!(gaussian_fit(&k, 0, &few, PI * t, 0.0), Err(LabError::InsufficientData(_))));
}

#[test]
fn harnack_constant_and_gaussian_cases() {
    let ef = frame(Builtin::Euclidean(2), 0.0);
    let per = Lattice::centered(&[0.0; 2], &[20, 20], &[0.05, 0.05], &[true; 2]).unwrap();
    let cyl = Cylinders { rho: 0.1, xbar: vec![0.0, 0.0], tbar: 0.1, samples: 4 };
    let ball = |x: &[f64]| (x[0] * x[0] + x[1] * x[1]).sqrt() < 0.1;
    let r = harnack_ratio(&ef, &identity(2), &per, vec![1.0; per.len()], &cyl, &ball).unwrap();
    assert!((r.ratio - 1.0).abs() < 1e-12);

    let lat = Lattice::centered(&[0.0; 2], &[100, 100], &[0.02, 0.02], &[false; 2]).unwrap();
    let src = [0.3, 0.0];
    let u0 = discrete_delta(&lat, &src).unwrap();
    let cyl = Cylinders { samples: 6, ..cyl };
    let r = harnack_ratio(&ef, &identity(2), &lat, u0, &cyl, &ball).unwrap();
    let g = |x: &[f64], t: f64| gauss(&[x[0] - src[0], x[1] - src[1]], t);
    let nodes: Vec<Vec<f64>> = (0..lat.len()).map(|i| lat.point(i)).filter(|x| ball(x)).collect();
    let sup = cyl.minus_times().iter().flat_map(|&t| nodes.iter().map(move |x| g(x, t))).fold(0.0, f64::max);
    let inf = cyl.plus_times().iter().flat_map(|&t| nodes.iter().map(move |x| g(x, t))).fold(f64::INFINITY, f64::min);
    assert!((r.ratio / (sup / inf) - 1.0).abs() <= 0.05, "{} vs {}", r.ratio, sup / inf);

    let zero = vec![0.0; lat.len()];
    assert!(matches!(harnack_ratio(&ef, &identity(2), &lat, zero, &cyl, &ball), Err(LabError::DegenerateInfimum(_))));
}

#[test]
fn lift_marginal_keeps_mass_and_lifted_distance_dominates() {
    let eps = 0.5;
    let lx = h1_heat_lattice(eps, 0.05, 0.2, 10).unwrap();
    let mut lower = lx.lower.clone();
    let mut spacing = lx.spacing.clone();
    let mut counts = lx.counts.clone();
    lower.extend_from_slice(&[-1.2, -1.2, -1.25]);
    spacing.extend_from_slice(&[1.2, 1.2, 1.25]);
    counts.extend_from_slice(&[3, 3, 3]);
    let lat6 = Lattice::from_parts(lower, spacing, counts, vec![false; 6]).unwrap();
    let k6 = lift_h1_kernel(eps, &lat6, &[0.0; 6], 0.05, &McOptions { paths: 100_000, seed: 2, ..Default::default() }).unwrap();
    let m = marginalize(&k6).unwrap();
    for (a, b) in m.mass.iter().zip(&k6.mass) {
        assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
    }
    let base = frame(Builtin::Heisenberg1, eps);
    let opts = ControlOptions::default();
    for y in [[0.3, 0.0, 0.0], [0.0, 0.2, 0.1], [0.1, -0.1, 0.2]] {
        let d = cclab_core::geodesy::dist_control(&base, &[0.0; 3], &y, &opts).unwrap().value;
        let dl = lifted_distance(eps, &[0.0; 3], &y, &opts).unwrap();
        assert!(dl >= d * (1.0 - 0.02), "lifted {dl} < base {d}");
    }
}
