use std::sync::Arc;

use cclab_core::frames::{build_builtin_frame, make_eps_frame, Builtin};
use cclab_core::geodesy::{dist_control, dist_lattice, gauge_dist_heis, ControlOptions, DistanceGraph, GraphOptions};
use cclab_core::Lattice;

fn h1(eps: f64) -> cclab_core::EpsFrame {
    make_eps_frame(Arc::new(build_builtin_frame(Builtin::Heisenberg1)), eps).unwrap()
}

fn h1_lattice() -> Lattice {
    // horizontal step 0.1, vertical step 0.01 = 0.1²
    Lattice::centered(&[0.0; 3], &[12, 12, 60], &[0.1, 0.1, 0.01], &[false; 3]).unwrap()
}

#[test]
fn horizontal_segment_has_unit_length() {
    let r = dist_lattice(&h1(0.0), &h1_lattice(), &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
    assert!((r.value - 1.0).abs() <= 0.05, "{}", r.value);
    assert!(r.upper_bound_flag);
    let path = r.witness_path.unwrap();
    assert_eq!(path.first().unwrap(), &vec![0.0; 3]);
}

#[test]
fn identical_endpoints_give_zero() {
    let r = dist_lattice(&h1(0.3), &h1_lattice(), &[0.2, 0.1, 0.05], &[0.2, 0.1, 0.05]).unwrap();
    assert_eq!(r.value, 0.0);
}

#[test]
fn vertical_distance_bound_at_eps_one() {
    let lat = h1_lattice();
    let g = DistanceGraph::build(&h1(1.0), &lat, &GraphOptions::default()).unwrap();
    for z in [0.05, 0.2, 0.5] {
        let d = g.distance(&[0.0; 3], &[0.0, 0.0, z]).unwrap().value;
        assert!(d <= z.min(4.0 * z.sqrt()) + 1e-9, "z={z} d={d}");
    }
}

#[test]
fn out_of_box_is_rejected() {
    assert!(dist_lattice(&h1(0.0), &h1_lattice(), &[0.0; 3], &[3.0, 0.0, 0.0]).is_err());
}

#[test]
fn control_distance_examples() {
    let opts = ControlOptions::default();
    let r = dist_control(&h1(0.0), &[0.0; 3], &[1.0, 0.0, 0.0], &opts).unwrap();
    assert!((r.value - 1.0).abs() <= 0.01, "{}", r.value);
    let e2 = make_eps_frame(Arc::new(build_builtin_frame(Builtin::Euclidean(2))), 0.5).unwrap();
    let r = dist_control(&e2, &[0.1, -0.3], &[0.7, 0.5], &opts).unwrap();
    assert!((r.value - 1.0).abs() <= 1e-3, "{}", r.value);
}

#[test]
fn control_and_lattice_agree_on_vertical_target() {
    let y = [0.0, 0.0, 1.0];
    let c = dist_control(&h1(0.0), &[0.0; 3], &y, &ControlOptions::default()).unwrap();
    assert!(c.upper_bound_flag);
    let lat = Lattice::centered(&[0.0; 3], &[10, 10, 130], &[0.1, 0.1, 0.01], &[false; 3]).unwrap();
    let l = dist_lattice(&h1(0.0), &lat, &[0.0; 3], &y).unwrap();
    let rel = (c.value - l.value).abs() / c.value.min(l.value);
    eprintln!("control {} lattice {} (circle {})", c.value, l.value, (2.0 * std::f64::consts::PI).sqrt());
    assert!(rel <= 0.10, "control {} lattice {}", c.value, l.value);
    // planar projection lower bound
    assert!(c.value >= 0.0);
}

#[test]
fn control_respects_planar_projection_bound() {
    let y = [0.4, -0.3, 0.2];
    let c = dist_control(&h1(0.0), &[0.0; 3], &y, &ControlOptions::default()).unwrap();
    assert!(c.value >= 0.5 * 0.99);
}

#[test]
fn lattice_distance_tracks_gauge() {
    let lat = h1_lattice();
    for eps in [0.0, 1.0] {
        let g = DistanceGraph::build(&h1(eps), &lat, &GraphOptions::default()).unwrap();
        for y in [[0.3, 0.0, 0.0], [0.0, 0.0, 0.3], [0.2, -0.2, 0.1]] {
            let d = g.distance(&[0.0; 3], &y).unwrap().value;
            let n = gauge_dist_heis(&y, &[0.0; 3], eps);
            let ratio = d / n;
            assert!(ratio > 0.3 && ratio < 3.5, "eps {eps} y {y:?}: d {d} gauge {n}");
        }
    }
}
