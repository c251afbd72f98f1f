use std::sync::Arc;

use cclab_core::geodesy::GraphOptions;
use cclab_core::measure::*;
use cclab_core::*;

fn frame(b: Builtin, eps: f64) -> EpsFrame {
    make_eps_frame(Arc::new(build_builtin_frame(b)), eps).unwrap()
}

#[test]
fn euclidean_ball_volume() {
    let e3 = frame(Builtin::Euclidean(3), 0.0);
    let res = BallResolution::default();
    let lat = ball_lattice(&e3, &[0.0; 3], 0.5, &res, &[1.0; 3]).unwrap();
    let p = BallProbe::new(&e3, &lat, &[0.0; 3], &GraphOptions { radius: 3, ..Default::default() }).unwrap();
    let v = p.volume_mc(0.5, 100_000, 3).unwrap();
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
    assert!((v.volume / exact - 1.0).abs() < 0.04, "{}", v.volume);
    assert!(v.stderr > 0.0 && v.method == VolumeMethod::Montecarlo);
}

#[test]
fn euclidean_doubling() {
    let e3 = frame(Builtin::Euclidean(3), 0.0);
    let d = doubling_adapted(&e3, &[0.0; 3], 0.2, 50_000, 5, &BallResolution::default()).unwrap();
    assert!((d.ratio / 8.0 - 1.0).abs() < 0.1, "{}", d.ratio);
}

#[test]
fn heisenberg_doubling_at_zero() {
    let h = frame(Builtin::Heisenberg1, 0.0);
    let d = doubling_adapted(&h, &[0.0; 3], 0.2, 50_000, 5, &BallResolution::default()).unwrap();
    assert!(d.ratio > 12.0 && d.ratio < 20.0, "{}", d.ratio);
}

#[test]
fn probe_rejects_bad_requests() {
    let h = frame(Builtin::Heisenberg1, 0.5);
    let p = BallProbe::adapted(&h, &[0.0; 3], 0.1, &BallResolution::default()).unwrap();
    assert!(p.volume_mc(0.1, 50_000, 1).is_ok());
    assert!(matches!(p.volume_mc(0.1, 100, 1), Err(LabError::InvalidParameter(_))));
    assert!(matches!(p.volume_mc(5.0, 50_000, 1), Err(LabError::OutOfDomain(_))));
    let a = p.volume_mc(0.08, 20_000, 9).unwrap();
    let b = p.volume_mc(0.08, 20_000, 9).unwrap();
    assert_eq!(a.volume.to_bits(), b.volume.to_bits());
}

#[test]
fn poincare_linear_function() {
    let e2 = frame(Builtin::Euclidean(2), 0.0);
    let p = BallProbe::adapted(&e2, &[0.0; 2], 0.4, &BallResolution::default()).unwrap();
    let tests = vec![
        TestFunction { name: "x1".into(), f: Arc::new(|x| x[0]) },
        TestFunction { name: "one".into(), f: Arc::new(|_| 1.0) },
    ];
    let rep = p.poincare(&e2, 0.2, &tests).unwrap();
    assert_eq!(rep.ratios.len(), 1);
    assert!(rep.max_ratio > 0.0 && rep.max_ratio <= 1.0);
}

#[test]
fn nsw_sandwiches_heisenberg_volume() {
    let res = BallResolution::default();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for eps in [0.0, 1.0] {
        let h = frame(Builtin::Heisenberg1, eps);
        for r in [0.05, 0.2] {
            let v = BallProbe::adapted(&h, &[0.0; 3], r, &res).unwrap().volume_mc(r, 30_000, 2).unwrap();
            let q = v.volume / nsw_volume(&h, &[0.0; 3], r).unwrap();
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    assert!(hi / lo <= 10.0, "{lo} {hi}");
}
