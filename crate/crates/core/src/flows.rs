//! ε-regularized total-variation and mean-curvature flows of graphs,
//! ∂_t u = Σ X_i^ε(X_i^ε u / W) and ∂_t u = W Σ X_i^ε(X_i^ε u / W) with
//! W = √(1 + Σ (X_i^ε u)²), Dirichlet data φ on the box boundary.
//!
//! Each X_i^ε(g X_i^ε u) is discretized along the flow of the field:
//! [(u(Φ_δ x) − u(x)) / W(x) − (u(x) − u(Φ_{−δ} x)) / W(Φ_{−δ} x)] / δ²
//! with W from forward differences. The tv step is then explicit descent on
//! the discrete energy Σ W, all neighbor weights are positive, and foot
//! points that leave the box read φ.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::frames::{flow_in_place, horizontal_gradient, make_eps_frame, EpsFrame, Frame};
use crate::heat::{field_step, foot_weights};
use crate::lattice::Lattice;

pub type BoundaryFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Tv,
    Mcf,
}

impl FlowKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tv" => Ok(FlowKind::Tv),
            "mcf" => Ok(FlowKind::Mcf),
            _ => Err(LabError::InvalidParameter(format!("unknown flow kind {s} (tv|mcf)"))),
        }
    }
}

/// W and a_ij at a gradient ξ.
#[derive(Debug, Clone)]
pub struct FlowCoefficients {
    pub w: f64,
    pub a: DMatrix<f64>,
}

impl FlowCoefficients {
    pub fn at(kind: FlowKind, xi: &[f64]) -> Self {
        let p = xi.len();
        let w2 = 1.0 + xi.iter().map(|v| v * v).sum::<f64>();
        let w = w2.sqrt();
        let mut a = DMatrix::identity(p, p);
        for i in 0..p {
            for j in 0..p {
                a[(i, j)] -= xi[i] * xi[j] / w2;
            }
        }
        if kind == FlowKind::Tv {
            a /= w;
        }
        FlowCoefficients { w, a }
    }
}

#[derive(Clone)]
pub struct FlowState {
    pub lat: Lattice,
    pub u: Vec<f64>,
    pub t: f64,
    pub eps: f64,
    /// φ at every node; only boundary entries are imposed.
    pub boundary: Vec<f64>,
    pub kind: FlowKind,
    pub phi: BoundaryFn,
}

impl std::fmt::Debug for FlowState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowState").field("lat", &self.lat).field("t", &self.t).field("eps", &self.eps).field("kind", &self.kind).finish()
    }
}

impl FlowState {
    /// Interior values from `u0`, boundary nodes set to φ.
    pub fn with_interior(lat: Lattice, phi: BoundaryFn, kind: FlowKind, eps: f64, u0: Vec<f64>) -> Result<Self> {
        if u0.len() != lat.len() {
            return Err(LabError::InvalidParameter("initial data length differs from lattice".into()));
        }
        let boundary = lat.sample(|x| phi(x));
        let mut u = u0;
        for i in 0..lat.len() {
            if lat.is_boundary(i) {
                u[i] = boundary[i];
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter("initial data is not finite".into()));
        }
        Ok(FlowState { lat, u, t: 0.0, eps, boundary, kind, phi })
    }

    /// φ on the boundary, interior from 200 Jacobi sweeps of the Euclidean
    /// Laplacian started at φ itself.
    pub fn extend(lat: Lattice, phi: BoundaryFn, kind: FlowKind, eps: f64) -> Result<Self> {
        let u0 = lat.sample(|x| phi(x));
        let u0 = jacobi_extension(&lat, u0, 200);
        Self::with_interior(lat, phi, kind, eps, u0)
    }

    pub fn boundary_residual(&self) -> f64 {
        (0..self.lat.len())
            .filter(|&i| self.lat.is_boundary(i))
            .map(|i| (self.u[i] - self.boundary[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Jacobi sweeps for Δu = 0 with boundary nodes held fixed.
pub fn jacobi_extension(lat: &Lattice, mut u: Vec<f64>, sweeps: usize) -> Vec<f64> {
    let n = lat.dim();
    let w: Vec<f64> = lat.spacing.iter().map(|h| 1.0 / (h * h)).collect();
    let wsum: f64 = 2.0 * w.iter().sum::<f64>();
    for _ in 0..sweeps {
        let next = crate::par::map_chunks(lat.len(), 4096, |range| {
            range
                .map(|i| {
                    if lat.is_boundary(i) {
                        return u[i];
                    }
                    let mut acc = 0.0;
                    for k in 0..n {
                        for off in [-1, 1] {
                            acc += w[k] * u[lat.shift(i, k, off).unwrap_or(i)];
                        }
                    }
                    acc / wsum
                })
                .collect::<Vec<f64>>()
        });
        u = next;
    }
    u
}

/// Precomputed foot points of the active fields at every node.
pub struct FlowSolver {
    pub ef: EpsFrame,
    pub lat: Lattice,
    /// Active field indices and their flow times δ.
    pub fields: Vec<(usize, f64)>,
    unit: EpsFrame,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    wts: Vec<f64>,
    /// φ at feet outside the box, NaN for feet inside.
    outside: Vec<f64>,
}

impl FlowSolver {
    pub fn new(ef: &EpsFrame, lat: &Lattice, phi: &BoundaryFn) -> Result<Self> {
        if lat.dim() != ef.dim() {
            return Err(LabError::InvalidParameter("lattice and frame dimensions differ".into()));
        }
        if lat.dim() > 8 {
            return Err(LabError::UnsupportedFrame("flows support at most 8 dimensions".into()));
        }
        let p = ef.p();
        let mut fields = Vec::new();
        for k in 0..p {
            if ef.is_null(k) {
                continue;
            }
            let mut c = vec![0.0; p];
            c[k] = 1.0;
            if let Some(d) = field_step(ef, &c, lat) {
                fields.push((k, d));
            }
        }
        if fields.is_empty() {
            return Err(LabError::InvalidParameter("no active field on the lattice".into()));
        }
        let n = lat.dim();
        let nf = 2 * fields.len();
        let rows = crate::par::map_chunks(lat.len(), 1024, |range| {
            let mut out = Vec::with_capacity(range.len() * nf);
            let mut y = vec![0.0; n];
            let mut st = Vec::new();
            let mut c = vec![0.0; p];
            for i in range {
                let x = lat.point(i);
                for &(k, d) in &fields {
                    c.iter_mut().for_each(|v| *v = 0.0);
                    c[k] = 1.0;
                    for sign in [1.0, -1.0] {
                        y.copy_from_slice(&x);
                        flow_in_place(ef, &c, &mut y, 4, sign * d);
                        foot_weights(lat, &y, &mut st);
                        if st.is_empty() {
                            out.push((Vec::new(), phi(&y)));
                        } else {
                            out.push((st.iter().map(|&(j, w)| (j as u32, w)).collect::<Vec<_>>(), f64::NAN));
                        }
                    }
                }
            }
            out
        });
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut wts = Vec::new();
        let mut outside = Vec::with_capacity(rows.len());
        offsets.push(0);
        for (e, o) in rows {
            for (j, w) in e {
                cols.push(j);
                wts.push(w);
            }
            offsets.push(cols.len());
            outside.push(o);
        }
        let unit = make_eps_frame(ef.base.clone(), 1.0)?;
        Ok(FlowSolver { ef: ef.clone(), lat: lat.clone(), fields, unit, offsets, cols, wts, outside })
    }

    /// True for ε = 0 runs, which only carry the horizontal terms.
    pub fn degenerate(&self) -> bool {
        self.ef.eps == 0.0
    }

    fn nf(&self) -> usize {
        2 * self.fields.len()
    }

    /// Value at a foot and the weight it puts on the node itself.
    #[inline]
    fn foot(&self, f: usize, u: &[f64], node: usize) -> (f64, f64) {
        let o = self.outside[f];
        if !o.is_nan() {
            return (o, 0.0);
        }
        let mut acc = 0.0;
        let mut own = 0.0;
        for e in self.offsets[f]..self.offsets[f + 1] {
            let j = self.cols[e] as usize;
            acc += self.wts[e] * u[j];
            if j == node {
                own += self.wts[e];
            }
        }
        (acc, own)
    }

    #[inline]
    fn foot_interp(&self, f: usize, v: &[f64]) -> Option<f64> {
        if !self.outside[f].is_nan() {
            return None;
        }
        Some((self.offsets[f]..self.offsets[f + 1]).map(|e| self.wts[e] * v[self.cols[e] as usize]).sum())
    }

    /// W from forward differences at every node.
    pub fn w_field(&self, u: &[f64]) -> Vec<f64> {
        let nf = self.nf();
        crate::par::map_chunks(self.lat.len(), 4096, |range| {
            range
                .map(|i| {
                    let mut s = 1.0;
                    for (a, &(_, d)) in self.fields.iter().enumerate() {
                        let (up, _) = self.foot(i * nf + 2 * a, u, i);
                        let g = (up - u[i]) / d;
                        s += g * g;
                    }
                    s.sqrt()
                })
                .collect::<Vec<f64>>()
        })
    }

    /// Rate ∂_t u and the diagonal weight at every node (zero on the boundary).
    fn rate(&self, kind: FlowKind, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self.w_field(u);
        let nf = self.nf();
        let pairs = crate::par::map_chunks(self.lat.len(), 4096, |range| {
            range
                .map(|i| {
                    if self.lat.is_boundary(i) {
                        return (0.0, 0.0);
                    }
                    let mut l = 0.0;
                    let mut diag = 0.0;
                    for (a, &(_, d)) in self.fields.iter().enumerate() {
                        let d2 = d * d;
                        let (up, own_up) = self.foot(i * nf + 2 * a, u, i);
                        let (dn, own_dn) = self.foot(i * nf + 2 * a + 1, u, i);
                        let w_dn = self.foot_interp(i * nf + 2 * a + 1, &w).unwrap_or(w[i]);
                        l += (up - u[i]) / (d2 * w[i]) + (dn - u[i]) / (d2 * w_dn);
                        diag += (1.0 - own_up) / (d2 * w[i]) + (1.0 - own_dn) / (d2 * w_dn);
                    }
                    match kind {
                        FlowKind::Tv => (l, diag),
                        FlowKind::Mcf => (w[i] * l, w[i] * diag),
                    }
                })
                .collect::<Vec<(f64, f64)>>()
        });
        pairs.into_iter().unzip()
    }

    /// ∂_t u at the current state.
    pub fn velocity(&self, state: &FlowState) -> Vec<f64> {
        self.rate(state.kind, &state.u).0
    }

    /// Largest monotone time step at the current state.
    pub fn dt_bound(&self, state: &FlowState) -> f64 {
        let (_, diag) = self.rate(state.kind, &state.u);
        let m = diag.iter().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            1.0 / m
        } else {
            f64::INFINITY
        }
    }

    /// Bound that holds for every tv state (W ≥ 1).
    pub fn tv_dt_bound(&self) -> f64 {
        1.0 / self.fields.iter().map(|&(_, d)| 2.0 / (d * d)).sum::<f64>()
    }

    /// Σ W · cell volume.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.w_field(u).iter().sum::<f64>() * self.lat.cell_volume()
    }

    /// sup over non-boundary nodes of the ε = 1 gradient length.
    pub fn sup_grad1(&self, u: &[f64]) -> f64 {
        let g = crate::par::map_chunks(self.lat.len(), 4096, |range| range.map(|i| self.grad1_at(u, i)).collect::<Vec<f64>>());
        g.into_iter().fold(0.0, f64::max)
    }

    /// Same, restricted to the given nodes.
    pub fn sup_grad1_on(&self, u: &[f64], nodes: &[usize]) -> f64 {
        let g = crate::par::map_chunks(nodes.len(), 4096, |range| range.map(|k| self.grad1_at(u, nodes[k])).collect::<Vec<f64>>());
        g.into_iter().fold(0.0, f64::max)
    }

    fn grad1_at(&self, u: &[f64], i: usize) -> f64 {
        if self.lat.is_boundary(i) {
            return 0.0;
        }
        horizontal_gradient(&self.unit, &self.lat, u, i)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }
}

/// One explicit step with coefficients frozen at the current state.
pub fn flow_step(solver: &FlowSolver, state: &mut FlowState, dt: f64) -> Result<()> {
    if state.lat.counts != solver.lat.counts {
        return Err(LabError::InvalidParameter("state and solver lattices differ".into()));
    }
    if !(dt > 0.0) {
        return Err(LabError::InvalidParameter("dt must be positive".into()));
    }
    let (l, diag) = solver.rate(state.kind, &state.u);
    let m = diag.iter().cloned().fold(0.0, f64::max);
    if dt * m > 1.0 + 1e-12 {
        return Err(LabError::StabilityError { dt, bound: 1.0 / m });
    }
    for i in 0..state.u.len() {
        state.u[i] = if state.lat.is_boundary(i) { state.boundary[i] } else { state.u[i] + dt * l[i] };
    }
    state.t += dt;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowDiagnostics {
    pub step: usize,
    pub t: f64,
    pub eps: f64,
    pub sup_u: f64,
    pub inf_u: f64,
    pub sup_grad1: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub state: FlowState,
    pub diagnostics: Vec<FlowDiagnostics>,
    pub dt: f64,
}

fn diagnose(solver: &FlowSolver, state: &FlowState, step: usize) -> FlowDiagnostics {
    FlowDiagnostics {
        step,
        t: state.t,
        eps: state.eps,
        sup_u: state.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        inf_u: state.u.iter().cloned().fold(f64::INFINITY, f64::min),
        sup_grad1: solver.sup_grad1(&state.u),
        energy: solver.energy(&state.u),
    }
}

/// Time step used when none is given: half the monotonicity bound of the
/// initial state (and of every tv state).
pub fn auto_dt(solver: &FlowSolver, state: &FlowState) -> f64 {
    let b = solver.dt_bound(state);
    match state.kind {
        FlowKind::Tv => 0.5 * solver.tv_dt_bound().min(b),
        FlowKind::Mcf => 0.5 * b,
    }
}

/// Iterates flow_step up to t_end; diagnostics at step 0 and after every step.
pub fn run_flow(solver: &FlowSolver, initial: FlowState, t_end: f64, dt: Option<f64>) -> Result<FlowRun> {
    if !(t_end >= 0.0) {
        return Err(LabError::InvalidParameter("t_end must be nonnegative".into()));
    }
    let dt = match dt {
        Some(d) => d,
        None => auto_dt(solver, &initial),
    };
    let steps = if t_end == 0.0 { 0 } else { (t_end / dt).ceil() as usize };
    let dt = if steps == 0 { dt } else { t_end / steps as f64 };
    let mut state = initial;
    let mut diagnostics = vec![diagnose(solver, &state, 0)];
    for s in 1..=steps {
        flow_step(solver, &mut state, dt)?;
        if state.u.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Diverged(s));
        }
        diagnostics.push(diagnose(solver, &state, s));
    }
    Ok(FlowRun { state, diagnostics, dt })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub eps: Vec<f64>,
    /// ‖u_{ε_k} − u_{ε_{k+1}}‖∞ on the sub-box.
    pub gaps: Vec<f64>,
    /// Gaps non-increasing within `noise`.
    pub cauchy: bool,
    pub noise: f64,
    /// Share of consecutive gap pairs with gap_k > 2·gap_{k+1}.
    pub halving_violations: f64,
    /// sup over time of sup|∇₁u| per ε, whole lattice.
    pub sup_grad1: Vec<f64>,
    /// Same on the sub-box only.
    pub sup_grad1_interior: Vec<f64>,
    pub dt: f64,
    pub degenerate: Vec<bool>,
}

/// Runs every ε on the same lattice, initial data and time step and compares
/// the states at `t_probe` on the sub-box [lo, hi].
#[allow(clippy::too_many_arguments)]
pub fn eps_convergence_study(
    frame: Arc<Frame>,
    lat: &Lattice,
    phi: BoundaryFn,
    kind: FlowKind,
    eps_list: &[f64],
    t_probe: f64,
    sub_box: (&[f64], &[f64]),
    noise: f64,
) -> Result<ConvergenceTable> {
    if eps_list.is_empty() {
        return Err(LabError::InvalidParameter("empty eps list".into()));
    }
    let mut solvers = Vec::new();
    for &e in eps_list {
        let ef = make_eps_frame(frame.clone(), e)?;
        solvers.push(FlowSolver::new(&ef, lat, &phi)?);
    }
    let base = FlowState::extend(lat.clone(), phi.clone(), kind, eps_list[0])?;
    let mut dt = f64::INFINITY;
    for s in &solvers {
        let mut st = base.clone();
        st.eps = s.ef.eps;
        dt = dt.min(auto_dt(s, &st));
    }
    let (lo, hi) = sub_box;
    let inside: Vec<usize> = (0..lat.len())
        .filter(|&i| {
            let x = lat.point(i);
            x.iter().enumerate().all(|(k, v)| *v >= lo[k] - 1e-12 && *v <= hi[k] + 1e-12)
        })
        .collect();
    if inside.is_empty() {
        return Err(LabError::InvalidParameter("sub-box contains no node".into()));
    }
    let mut finals = Vec::new();
    let mut grads = Vec::new();
    let mut inner = Vec::new();
    for s in &solvers {
        let mut st = base.clone();
        st.eps = s.ef.eps;
        let steps = (t_probe / dt).ceil() as usize;
        let step_dt = if steps == 0 { dt } else { t_probe / steps as f64 };
        let mut g = s.sup_grad1(&st.u);
        let mut gi = s.sup_grad1_on(&st.u, &inside);
        for k in 1..=steps {
            flow_step(s, &mut st, step_dt)?;
            if st.u.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Diverged(k));
            }
            g = g.max(s.sup_grad1(&st.u));
            gi = gi.max(s.sup_grad1_on(&st.u, &inside));
        }
        grads.push(g);
        inner.push(gi);
        finals.push(st.u);
    }
    let gaps: Vec<f64> = finals
        .windows(2)
        .map(|w| inside.iter().map(|&i| (w[0][i] - w[1][i]).abs()).fold(0.0, f64::max))
        .collect();
    let cauchy = gaps.windows(2).all(|g| g[1] <= g[0] + noise);
    let pairs = gaps.len().saturating_sub(1);
    let halving_violations = if pairs == 0 {
        0.0
    } else {
        gaps.windows(2).filter(|g| g[0] > 2.0 * g[1] + noise).count() as f64 / pairs as f64
    };
    Ok(ConvergenceTable {
        eps: eps_list.to_vec(),
        gaps,
        cauchy,
        noise,
        halving_violations,
        sup_grad1: grads,
        sup_grad1_interior: inner,
        dt,
        degenerate: solvers.iter().map(|s| s.degenerate()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn coefficient_spectra() {
        let xi = [0.7, -1.3, 0.4];
        let w2: f64 = 1.0 + xi.iter().map(|v| v * v).sum::<f64>();
        let m = FlowCoefficients::at(FlowKind::Mcf, &xi);
        let e = SymmetricEigen::new(m.a.clone()).eigenvalues;
        for v in e.iter() {
            assert!(*v >= 1.0 / w2 - 1e-12 && *v <= 1.0 + 1e-12);
        }
        let t = FlowCoefficients::at(FlowKind::Tv, &xi);
        let e = SymmetricEigen::new(t.a).eigenvalues;
        assert!(e.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }
}
