use std::sync::Arc;

use cclab_core::flows::*;
use cclab_core::*;
use rand::{Rng, SeedableRng};

fn h1(eps: f64) -> EpsFrame {
    make_eps_frame(Arc::new(build_builtin_frame(Builtin::Heisenberg1)), eps).unwrap()
}

fn unit_box() -> Lattice {
    Lattice::centered(&[0.0; 3], &[5, 5, 50], &[0.1, 0.1, 0.01], &[false; 3]).unwrap()
}

fn bump(c: [f64; 3], a: f64, w: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| a * (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (w * w) - (x[2] - c[2]).powi(2) / (0.25 * w * w)).exp()
}

#[test]
fn constants_and_affine_data_are_stationary() {
    let lat = unit_box();
    let phi: BoundaryFn = Arc::new(|_: &[f64]| 0.7);
    let s = FlowSolver::new(&h1(0.5), &lat, &phi).unwrap();
    let st = FlowState::with_interior(lat.clone(), phi.clone(), FlowKind::Mcf, 0.5, vec![0.7; lat.len()]).unwrap();
    let run = run_flow(&s, st, 0.002, None).unwrap();
    assert!(run.state.u.iter().all(|v| *v == 0.7));

    let e2 = make_eps_frame(Arc::new(build_builtin_frame(Builtin::Euclidean(2))), 0.0).unwrap();
    let lat = Lattice::centered(&[0.0; 2], &[20, 20], &[0.05, 0.05], &[false; 2]).unwrap();
    let affine: BoundaryFn = Arc::new(|x: &[f64]| 0.3 * x[0] - 1.1 * x[1] + 0.2);
    let s = FlowSolver::new(&e2, &lat, &affine).unwrap();
    let u0 = lat.sample(|x| affine(x));
    for kind in [FlowKind::Mcf, FlowKind::Tv] {
        let st = FlowState::with_interior(lat.clone(), affine.clone(), kind, 0.0, u0.clone()).unwrap();
        let run = run_flow(&s, st, 0.01, None).unwrap();
        let err = run.state.u.iter().zip(&u0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{kind:?} drift {err}");
    }
}

#[test]
fn maximum_principle_and_boundary_exactness() {
    let lat = unit_box();
    let phi: BoundaryFn = Arc::new(bump([0.1, -0.05, 0.0], 1.0, 0.2));
    let s = FlowSolver::new(&h1(0.5), &lat, &phi).unwrap();
    let mut st = FlowState::extend(lat, phi, FlowKind::Mcf, 0.5).unwrap();
    st.u = st.lat.sample(bump([0.1, -0.05, 0.0], 1.0, 0.2));
    let dt = auto_dt(&s, &st);
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for v in &st.u {
        hi = hi.max(*v);
        lo = lo.min(*v);
    }
    for _ in 0..200 {
        flow_step(&s, &mut st, dt).unwrap();
        let h = st.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = st.u.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(h <= hi && l >= lo, "max {h} > {hi} or min {l} < {lo}");
        assert_eq!(st.boundary_residual(), 0.0);
        hi = h;
        lo = l;
    }
    assert!(hi < 0.999, "bump did not flatten: {hi}");
}

#[test]
fn unstable_step_is_rejected() {
    let lat = unit_box();
    let phi: BoundaryFn = Arc::new(|_: &[f64]| 0.0);
    let s = FlowSolver::new(&h1(0.5), &lat, &phi).unwrap();
    let mut st = FlowState::extend(lat, phi, FlowKind::Tv, 0.5).unwrap();
    let dt = 3.0 * s.tv_dt_bound();
    assert!(matches!(flow_step(&s, &mut st, dt), Err(LabError::StabilityError { .. })));
}

#[test]
fn tv_energy_decreases() {
    let lat = unit_box();
    let phi: BoundaryFn = Arc::new(bump([0.0, 0.0, 0.0], 0.8, 0.15));
    for eps in [0.0, 0.5] {
        let s = FlowSolver::new(&h1(eps), &lat, &phi).unwrap();
        let mut st = FlowState::extend(lat.clone(), phi.clone(), FlowKind::Tv, eps).unwrap();
        st.u = lat.sample(|x| phi(x));
        let run = run_flow(&s, st, 0.01, None).unwrap();
        for w in run.diagnostics.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-8, "eps {eps}: energy rose at step {}", w[1].step);
        }
        let d = &run.diagnostics;
        assert!(d.last().unwrap().energy < d[0].energy);
    }
}

#[test]
fn comparison_principle_on_strictly_ordered_pairs() {
    let lat = unit_box();
    let margin = 1e-3;
    let phi: BoundaryFn = Arc::new(|x: &[f64]| 0.2 * x[0]);
    let phiv: BoundaryFn = Arc::new(move |x: &[f64]| 0.2 * x[0] + margin);
    for kind in [FlowKind::Mcf, FlowKind::Tv] {
        let su = FlowSolver::new(&h1(0.5), &lat, &phi).unwrap();
        let sv = FlowSolver::new(&h1(0.5), &lat, &phiv).unwrap();
        for seed in 0..5u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut c = || [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let (b1, b2, b3) = (bump(c(), 0.6, 0.15), bump(c(), -0.4, 0.2), bump(c(), 0.3, 0.12));
            let u0 = lat.sample(|x| phi(x) + b1(x) + b2(x));
            let v0: Vec<f64> = lat.sample(|x| b3(x) + margin).iter().zip(&u0).map(|(a, b)| a + b).collect();
            let mut u = FlowState::with_interior(lat.clone(), phi.clone(), kind, 0.5, u0).unwrap();
            let mut v = FlowState::with_interior(lat.clone(), phiv.clone(), kind, 0.5, v0).unwrap();
            let dt = auto_dt(&su, &u).min(auto_dt(&sv, &v));
            for step in 0..150 {
                flow_step(&su, &mut u, dt).unwrap();
                flow_step(&sv, &mut v, dt).unwrap();
                let bad = u.u.iter().zip(&v.u).filter(|(a, b)| a > b).count();
                assert_eq!(bad, 0, "{kind:?} seed {seed} step {step}: {bad} nodes out of order");
            }
        }
    }
}

/// Semi-discrete 1-D tv flow integrated independently with small RK4 steps.
fn tv_ode(u: &[f64], h: f64, t: f64, steps: usize) -> Vec<f64> {
    let rhs = |u: &[f64]| -> Vec<f64> {
        let n = u.len();
        let w: Vec<f64> = (0..n - 1).map(|i| (1.0 + ((u[i + 1] - u[i]) / h).powi(2)).sqrt()).collect();
        let mut r = vec![0.0; n];
        for i in 1..n - 1 {
            r[i] = ((u[i + 1] - u[i]) / w[i] - (u[i] - u[i - 1]) / w[i - 1]) / (h * h);
        }
        r
    };
    let dt = t / steps as f64;
    let mut y = u.to_vec();
    let add = |a: &[f64], b: &[f64], s: f64| a.iter().zip(b).map(|(x, y)| x + s * y).collect::<Vec<_>>();
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&add(&y, &k1, 0.5 * dt));
        let k3 = rhs(&add(&y, &k2, 0.5 * dt));
        let k4 = rhs(&add(&y, &k3, dt));
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[test]
fn tv_ramp_relaxes_to_the_affine_interpolant() {
    let e1 = make_eps_frame(Arc::new(build_builtin_frame(Builtin::Euclidean(1))), 0.0).unwrap();
    let lat = Lattice::new(&[0.0], &[1.0], &[32], &[false]).unwrap();
    let h = lat.spacing[0];
    let phi: BoundaryFn = Arc::new(|x: &[f64]| if x[0] < 0.5 { 0.0 } else { 1.0 });
    let ramp = |x: f64| ((x - 0.35) / 0.3).clamp(0.0, 1.0);
    let u0 = lat.sample(|x| ramp(x[0]));
    let s = FlowSolver::new(&e1, &lat, &phi).unwrap();
    let st = FlowState::with_interior(lat.clone(), phi, FlowKind::Tv, 0.0, u0.clone()).unwrap();
    let t_end = 0.05;
    let run = run_flow(&s, st.clone(), t_end, None).unwrap();
    let mut prev = f64::INFINITY;
    let mut st2 = st;
    for _ in 0..run.diagnostics.len() - 1 {
        let gap = (0..lat.len()).map(|i| (st2.u[i] - lat.point(i)[0]).abs()).fold(0.0, f64::max);
        assert!(gap <= prev + 1e-14);
        prev = gap;
        flow_step(&s, &mut st2, run.dt).unwrap();
    }
    let oracle = tv_ode(&u0, h, t_end, 200_000);
    let err = run.state.u.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 2e-3, "explicit scheme vs ODE oracle {err}");
}

#[test]
fn gradient_bound_for_mcf() {
    let lat = unit_box();
    let phi: BoundaryFn = Arc::new(|x: &[f64]| 0.5 * x[0] * x[0] - 0.2 * x[1]);
    let s = FlowSolver::new(&h1(0.5), &lat, &phi).unwrap();
    let mut st = FlowState::extend(lat.clone(), phi.clone(), FlowKind::Mcf, 0.5).unwrap();
    let b = bump([0.0, 0.1, 0.0], 0.3, 0.2);
    for i in 0..lat.len() {
        if !lat.is_boundary(i) {
            st.u[i] += b(&lat.point(i));
        }
    }
    let g0 = s.sup_grad1(&st.u);
    let v0 = s.velocity(&st).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let run = run_flow(&s, st, 0.01, None).unwrap();
    let sup = run.diagnostics.iter().map(|d| d.sup_grad1).fold(0.0, f64::max);
    assert!(sup <= g0 + v0 + 0.05 * g0, "sup {sup} vs {g0} + {v0}");
}

#[test]
fn constant_data_gives_zero_gaps() {
    let lat = unit_box();
    let phi: BoundaryFn = Arc::new(|_: &[f64]| 1.5);
    let f = Arc::new(build_builtin_frame(Builtin::Heisenberg1));
    let t = eps_convergence_study(f, &lat, phi, FlowKind::Mcf, &[1.0, 0.5, 0.25], 0.002, (&[-0.3; 3], &[0.3; 3]), 1e-3).unwrap();
    assert!(t.gaps.iter().all(|g| *g == 0.0));
    assert!(t.cauchy);
}

