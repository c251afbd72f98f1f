//! Explicit monotone scheme for ∂_t u = Σ a_ij X_i^ε X_j^ε u.
//!
//! A = Σ_k λ_k v_k v_kᵀ turns the operator into Σ_k λ_k W_k² with
//! W_k = Σ_i v_ki X_i^ε. Each W_k² is the second difference of u along the
//! flow of W_k, [u(Φ_δ x) − 2u(x) + u(Φ_{−δ} x)] / δ², with foot points
//! interpolated multilinearly (exact node hits on commensurate lattices).
//! All off-diagonal weights are nonnegative, so the step is monotone when
//! dt · diag ≤ 1.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{CoeffMatrix, KernelField, KernelMethod};
use crate::error::{LabError, Result};
use crate::frames::{flow_in_place, EpsFrame};
use crate::lattice::Lattice;

#[derive(Debug, Clone, Default)]
pub struct FdOptions {
    /// Time step; `None` picks half the stability bound (lazy enough to damp
    /// the odd-even mode of exact node hops).
    pub dt: Option<f64>,
    /// Extra output times besides t_end.
    pub snapshots: Vec<f64>,
    /// Allowed mass loss through the outer boundary before DomainTooSmall.
    pub max_mass_loss: Option<f64>,
}

/// Sparse generator of the scheme: off-diagonal rows plus the diagonal.
#[derive(Debug, Clone)]
pub struct FdOperator {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    fixed: Vec<bool>,
}

impl FdOperator {
    /// Largest stable time step.
    pub fn dt_bound(&self) -> f64 {
        let m = self.diag.iter().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            1.0 / m
        } else {
            f64::INFINITY
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// u ← u + dt L u, boundary rows held at zero.
    pub fn step(&self, u: &[f64], out: &mut [f64], dt: f64) {
        let n = u.len();
        let chunk = 4096;
        let parts = crate::par::map_chunks(n, chunk, |range| {
            range
                .map(|i| {
                    if self.fixed[i] {
                        return 0.0;
                    }
                    let mut acc = 0.0;
                    for e in self.offsets[i]..self.offsets[i + 1] {
                        acc += self.vals[e] * u[self.cols[e] as usize];
                    }
                    u[i] + dt * (acc - self.diag[i] * u[i])
                })
                .collect::<Vec<f64>>()
        });
        out.copy_from_slice(&parts);
    }

    /// L u without the time step.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|i| {
                if self.fixed[i] {
                    return 0.0;
                }
                let mut acc = 0.0;
                for e in self.offsets[i]..self.offsets[i + 1] {
                    acc += self.vals[e] * u[self.cols[e] as usize];
                }
                acc - self.diag[i] * u[i]
            })
            .collect()
    }
}

struct Term {
    lambda: f64,
    control: Vec<f64>,
    delta: f64,
}

fn terms(ef: &EpsFrame, a: &CoeffMatrix, lat: &Lattice) -> Result<Vec<Term>> {
    let p = ef.p();
    if a.a.nrows() != p {
        return Err(LabError::InvalidParameter(format!("coefficient matrix is {}×{}, frame has p = {p}", a.a.nrows(), a.a.ncols())));
    }
    let diagonal = (0..p).all(|i| (0..p).all(|j| i == j || a.a[(i, j)] == 0.0));
    let pairs: Vec<(f64, Vec<f64>)> = if diagonal {
        (0..p)
            .map(|i| {
                let mut v = vec![0.0; p];
                v[i] = 1.0;
                (a.a[(i, i)], v)
            })
            .collect()
    } else {
        let eig = SymmetricEigen::new(a.a.clone());
        (0..p).map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect())).collect()
    };
    let n = lat.dim();
    let samples = sample_nodes(lat);
    let h_ref = (0..n).map(|k| lat.spacing[k]).fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut w = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for (lambda, v) in pairs {
        if lambda <= 1e-14 {
            continue;
        }
        let Some(delta) = step_length(ef, &v, lat, &samples, h_ref, &mut w, &mut scratch) else { continue };
        out.push(Term { lambda, control: v, delta });
    }
    Ok(out)
}

/// Flow time for the second differences of Σ v_i X_i^ε; `None` when the
/// field vanishes on the lattice.
pub(crate) fn field_step(ef: &EpsFrame, v: &[f64], lat: &Lattice) -> Option<f64> {
    let n = lat.dim();
    let samples = sample_nodes(lat);
    let h_ref = (0..n).map(|k| lat.spacing[k]).fold(0.0, f64::max);
    step_length(ef, v, lat, &samples, h_ref, &mut vec![0.0; n], &mut vec![0.0; n])
}

fn sample_nodes(lat: &Lattice) -> Vec<usize> {
    let mut s: Vec<usize> = (0..lat.len()).step_by((lat.len() / 64).max(1)).collect();
    s.push(lat.len() - 1);
    s
}

fn step_length(
    ef: &EpsFrame,
    v: &[f64],
    lat: &Lattice,
    samples: &[usize],
    h_ref: f64,
    w: &mut [f64],
    scratch: &mut [f64],
) -> Option<f64> {
    let n = lat.dim();
    let mut fields: Vec<Vec<f64>> = Vec::new();
    for &s in samples {
        ef.velocity(v, &lat.point(s), w, scratch);
        fields.push(w.to_vec());
    }
    if fields.iter().all(|f| f.iter().all(|x| x.abs() < 1e-14)) {
        return None;
    }
    // a constant nonzero coefficient on some axis gives a one-node step;
    // longer steps would split that axis into decoupled sublattices
    let constant_axis = (0..n).find(|&ax| {
        let c = fields[0][ax];
        c.abs() > 1e-12 && fields.iter().all(|f| (f[ax] - c).abs() <= 1e-12 * c.abs())
    });
    Some(match constant_axis {
        Some(ax) => lat.spacing[ax] / fields[0][ax].abs(),
        None => {
            let mx = fields.iter().flat_map(|f| f.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
            h_ref / mx
        }
    })
}

/// Builds the sparse generator on `lat`.
pub fn build_operator(ef: &EpsFrame, a: &CoeffMatrix, lat: &Lattice) -> Result<FdOperator> {
    if lat.dim() != ef.dim() {
        return Err(LabError::InvalidParameter("lattice and frame dimensions differ".into()));
    }
    if lat.dim() > 8 {
        return Err(LabError::UnsupportedFrame("finite differences support at most 8 dimensions".into()));
    }
    let terms = terms(ef, a, lat)?;
    let n = lat.dim();
    let rows = crate::par::map_chunks(lat.len(), 2048, |range| {
        let mut out = Vec::with_capacity(range.len());
        let mut y = vec![0.0; n];
        let mut entries: Vec<(u32, f64)> = Vec::new();
        let mut stencil = Vec::new();
        for i in range {
            entries.clear();
            let mut diag = 0.0;
            if !lat.is_boundary(i) {
                let x = lat.point(i);
                for t in &terms {
                    let c = t.lambda / (t.delta * t.delta);
                    diag += 2.0 * c;
                    for sign in [1.0, -1.0] {
                        y.copy_from_slice(&x);
                        flow_in_place(ef, &t.control, &mut y, 4, sign * t.delta);
                        foot_weights(lat, &y, &mut stencil);
                        for &(j, wt) in &stencil {
                            entries.push((j as u32, c * wt));
                        }
                    }
                }
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
                for &(j, v) in entries.iter() {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += v,
                        _ => merged.push((j, v)),
                    }
                }
                // a foot point on the node itself only lowers the diagonal
                if let Some(pos) = merged.iter().position(|e| e.0 as usize == i) {
                    diag -= merged[pos].1;
                    merged.remove(pos);
                }
                entries = merged;
            }
            out.push((i, entries.clone(), diag));
        }
        out
    });
    let mut offsets = Vec::with_capacity(lat.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = Vec::with_capacity(lat.len());
    let mut fixed = Vec::with_capacity(lat.len());
    offsets.push(0);
    for (i, e, d) in rows {
        for (j, v) in e {
            cols.push(j);
            vals.push(v);
        }
        offsets.push(cols.len());
        diag.push(d);
        fixed.push(lat.is_boundary(i));
    }
    Ok(FdOperator { offsets, cols, vals, diag, fixed })
}

/// Multilinear weights of y on the lattice; points outside the box get no
/// weight (Dirichlet zero).
pub(crate) fn foot_weights(lat: &Lattice, y: &[f64], out: &mut Vec<(usize, f64)>) {
    out.clear();
    let n = lat.dim();
    let mut base = [0usize; 8];
    let mut frac = [0.0f64; 8];
    for a in 0..n {
        let mut f = (y[a] - lat.lower[a]) / lat.spacing[a];
        let cnt = lat.counts[a];
        if lat.periodic[a] {
            f = f.rem_euclid(cnt as f64);
        } else if f < -1e-9 || f > (cnt - 1) as f64 + 1e-9 {
            return;
        }
        let r = f.round();
        if (f - r).abs() < 1e-7 {
            base[a] = (r as usize) % cnt.max(1);
            frac[a] = 0.0;
        } else {
            let fl = f.floor();
            base[a] = fl as usize;
            frac[a] = f - fl;
        }
    }
    let corners = 1usize << n;
    for mask in 0..corners {
        let mut w = 1.0;
        let mut idx = 0usize;
        let mut ok = true;
        for a in 0..n {
            let up = mask >> a & 1 == 1;
            if frac[a] == 0.0 && up {
                ok = false;
                break;
            }
            w *= if up { frac[a] } else { 1.0 - frac[a] };
            let mut k = base[a] + up as usize;
            if k >= lat.counts[a] {
                if lat.periodic[a] {
                    k -= lat.counts[a];
                } else {
                    ok = false;
                    break;
                }
            }
            idx += k * lat.strides()[a];
        }
        if ok && w > 0.0 {
            out.push((idx, w));
        }
    }
}

/// Discrete delta: 1/cell volume at the node nearest to y.
pub fn discrete_delta(lat: &Lattice, y: &[f64]) -> Result<Vec<f64>> {
    lat.check_contains(y)?;
    let i = lat.nearest(y).ok_or_else(|| LabError::OutOfDomain("source outside lattice".into()))?;
    if lat.is_boundary(i) {
        return Err(LabError::OutOfDomain("source sits on the lattice boundary".into()));
    }
    let mut u = vec![0.0; lat.len()];
    u[i] = 1.0 / lat.cell_volume();
    Ok(u)
}

/// Runs the scheme from arbitrary initial data.
pub fn heat_fd_from(
    ef: &EpsFrame,
    a: &CoeffMatrix,
    lat: &Lattice,
    u0: Vec<f64>,
    source: &[f64],
    t_end: f64,
    opts: &FdOptions,
) -> Result<KernelField> {
    if !(t_end > 0.0) {
        return Err(LabError::InvalidParameter("t_end must be positive".into()));
    }
    if u0.len() != lat.len() {
        return Err(LabError::InvalidParameter("initial data length differs from lattice".into()));
    }
    let op = build_operator(ef, a, lat)?;
    let bound = op.dt_bound();
    let dt = match opts.dt {
        Some(dt) if dt > bound * (1.0 + 1e-12) => return Err(LabError::StabilityError { dt, bound }),
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(LabError::InvalidParameter(format!("time step {dt} must be positive"))),
        None => 0.5 * bound,
    };
    let steps = (t_end / dt).ceil() as usize;
    let dt = t_end / steps as f64;
    let mut wanted: Vec<usize> = opts
        .snapshots
        .iter()
        .filter(|&&t| t > 0.0 && t < t_end)
        .map(|&t| ((t / dt).round() as usize).clamp(1, steps))
        .collect();
    wanted.push(steps);
    wanted.sort_unstable();
    wanted.dedup();
    let cv = lat.cell_volume();
    let initial_mass: f64 = u0.iter().sum::<f64>() * cv;
    let mut u = u0;
    let mut next = vec![0.0; u.len()];
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut mass = Vec::new();
    let mut w = 0;
    for s in 1..=steps {
        op.step(&u, &mut next, dt);
        std::mem::swap(&mut u, &mut next);
        if w < wanted.len() && wanted[w] == s {
            times.push(s as f64 * dt);
            mass.push(u.iter().sum::<f64>() * cv);
            values.push(u.clone());
            w += 1;
        }
    }
    let max_loss = opts.max_mass_loss.unwrap_or(0.02);
    if let Some(&last) = mass.last() {
        if initial_mass > 0.0 && (initial_mass - last) / initial_mass > max_loss {
            return Err(LabError::DomainTooSmall((initial_mass - last) / initial_mass));
        }
    }
    Ok(KernelField { lat: lat.clone(), source: source.to_vec(), times, values, mass, method: KernelMethod::FiniteDifference, dt })
}

/// Heat kernel with pole at y by the monotone explicit scheme.
pub fn heat_fd(ef: &EpsFrame, a: &CoeffMatrix, lat: &Lattice, y: &[f64], t_end: f64, opts: &FdOptions) -> Result<KernelField> {
    let u0 = discrete_delta(lat, y)?;
    heat_fd_from(ef, a, lat, u0, y, t_end, opts)
}

/// Identity coefficient matrix of size p.
pub fn identity(p: usize) -> CoeffMatrix {
    CoeffMatrix::new(DMatrix::identity(p, p), 1.0, p).expect("identity is coercive")
}
