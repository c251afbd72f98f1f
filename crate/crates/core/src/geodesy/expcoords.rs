//! Exponential coordinates exp(Σ x_i Y_i)(x0) = x and the quasi-norms built
//! on them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::frames::Frame;
use crate::lattice::TWO_PI;

#[derive(Debug, Clone, Serialize)]
pub struct ExpCoords {
    pub x0: Vec<f64>,
    pub coords: Vec<f64>,
    /// Indices into the frame enumeration of the fields used as a basis.
    pub basis: Vec<usize>,
    pub residual: f64,
}

/// First n fields (in enumeration order) that are independent at x0.
fn basis_at(frame: &Frame, x0: &[f64]) -> Result<Vec<usize>> {
    let n = frame.dim();
    let mut chosen: Vec<usize> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for i in 0..frame.p() {
        let v = frame.eval_vec(i, x0);
        let mut trial = cols.clone();
        trial.push(v.clone());
        let m = DMatrix::from_fn(n, trial.len(), |r, c| trial[c][r]);
        let sv = m.singular_values();
        let smax = sv.max();
        if smax > 0.0 && sv.iter().filter(|s| **s > 1e-10 * smax).count() == trial.len() {
            chosen.push(i);
            cols.push(v);
            if chosen.len() == n {
                return Ok(chosen);
            }
        }
    }
    Err(LabError::CoordinateFailure(format!("fields of {} do not span at {x0:?}", frame.name)))
}

fn flow_map(frame: &Frame, basis: &[usize], c: &[f64], x0: &[f64]) -> Vec<f64> {
    let n = x0.len();
    let steps = 64;
    let dt = 1.0 / steps as f64;
    let mut y = x0.to_vec();
    let mut buf = vec![0.0; n];
    let vel = |z: &[f64], out: &mut [f64], buf: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &i) in basis.iter().enumerate() {
            if c[j] == 0.0 {
                continue;
            }
            frame.eval(i, z, buf);
            for k in 0..n {
                out[k] += c[j] * buf[k];
            }
        }
    };
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..steps {
        vel(&y, &mut k1, &mut buf);
        for k in 0..n {
            tmp[k] = y[k] + 0.5 * dt * k1[k];
        }
        vel(&tmp, &mut k2, &mut buf);
        for k in 0..n {
            tmp[k] = y[k] + 0.5 * dt * k2[k];
        }
        vel(&tmp, &mut k3, &mut buf);
        for k in 0..n {
            tmp[k] = y[k] + dt * k3[k];
        }
        vel(&tmp, &mut k4, &mut buf);
        for k in 0..n {
            y[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
    }
    y
}

fn wrapped(frame: &Frame, a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|k| {
            let mut d = a[k] - b[k];
            if frame.periodic[k] {
                d -= TWO_PI * (d / TWO_PI).round();
            }
            d
        })
        .collect()
}

/// Newton iteration on the time-one flow map, seeded by the linear solve
/// Σ x_i Y_i(x0) = x − x0.
pub fn exp_coords(frame: &Frame, x0: &[f64], x: &[f64]) -> Result<ExpCoords> {
    frame.check_domain(x0)?;
    frame.check_domain(x)?;
    let n = frame.dim();
    let basis = basis_at(frame, x0)?;
    let target_gap = wrapped(frame, x, x0);
    if target_gap.iter().all(|v| *v == 0.0) {
        return Ok(ExpCoords { x0: x0.to_vec(), coords: vec![0.0; n], basis, residual: 0.0 });
    }
    let y_at = DMatrix::from_fn(n, n, |r, c| frame.eval_vec(basis[c], x0)[r]);
    let lu = y_at.clone().lu();
    let mut c: Vec<f64> = lu
        .solve(&DVector::from_column_slice(&target_gap))
        .ok_or_else(|| LabError::CoordinateFailure("singular basis at base point".into()))?
        .iter()
        .copied()
        .collect();
    let tol = 1e-8 * frame.diameter();
    let mut miss = wrapped(frame, &flow_map(frame, &basis, &c, x0), x);
    let mut err = miss.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..50 {
        if err <= 1e-14 * (1.0 + frame.diameter()) {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        let mut q = c.clone();
        for j in 0..n {
            let h = 1e-7 * (1.0 + c[j].abs());
            q[j] = c[j] + h;
            let fp = wrapped(frame, &flow_map(frame, &basis, &q, x0), x);
            q[j] = c[j] - h;
            let fm = wrapped(frame, &flow_map(frame, &basis, &q, x0), x);
            q[j] = c[j];
            for r in 0..n {
                jac[(r, j)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let Some(step) = jac.lu().solve(&DVector::from_column_slice(&miss)) else { break };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let tm = wrapped(frame, &flow_map(frame, &basis, &trial, x0), x);
            let te = tm.iter().map(|v| v * v).sum::<f64>().sqrt();
            if te < err {
                c = trial;
                miss = tm;
                err = te;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if err > tol {
        return Err(LabError::CoordinateFailure(format!("Newton stalled with residual {err:e}")));
    }
    Ok(ExpCoords { x0: x0.to_vec(), coords: c, basis, residual: err })
}

fn scaled(v: f64, d: usize, eps: f64) -> f64 {
    let a = v.abs();
    if d <= 1 {
        return a;
    }
    let root = a.powf(1.0 / d as f64);
    if eps > 0.0 {
        (a / eps.powi(d as i32 - 1)).min(root)
    } else {
        root
    }
}

/// N_ε = √(Σ_{d=1} x_i²) + Σ_{d>1} min(ε^{−(d−1)}|x_i|, |x_i|^{1/d}) in
/// exponential coordinates around x0.
pub fn quasi_norm_equiregular(frame: &Frame, x0: &[f64], x: &[f64], eps: f64) -> Result<f64> {
    if eps < 0.0 {
        return Err(LabError::InvalidParameter("eps must be ≥ 0".into()));
    }
    let ec = exp_coords(frame, x0, x)?;
    let mut horiz = 0.0;
    let mut rest = 0.0;
    for (j, &i) in ec.basis.iter().enumerate() {
        let d = frame.degrees[i];
        if d == 1 {
            horiz += ec.coords[j] * ec.coords[j];
        } else {
            rest += scaled(ec.coords[j], d, eps);
        }
    }
    Ok(horiz.sqrt() + rest)
}

/// x ∈ B_{G,ε}(x0, r): max_i min(ε^{−(d−1)}|x_i|, |x_i|^{1/d}) < r.
pub fn box_ball_membership(frame: &Frame, x0: &[f64], x: &[f64], r: f64, eps: f64) -> Result<bool> {
    let ec = exp_coords(frame, x0, x)?;
    let m = ec
        .basis
        .iter()
        .enumerate()
        .map(|(j, &i)| scaled(ec.coords[j], frame.degrees[i], eps))
        .fold(0.0f64, f64::max);
    Ok(m < r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{build_builtin_frame, Builtin};

    #[test]
    fn heisenberg_coordinates() {
        let f = build_builtin_frame(Builtin::Heisenberg1);
        let e = exp_coords(&f, &[0.0; 3], &[0.3, -0.4, 0.0]).unwrap();
        assert!((e.coords[0] - 0.3).abs() < 1e-10 && (e.coords[1] + 0.4).abs() < 1e-10 && e.coords[2].abs() < 1e-10);
        let e = exp_coords(&f, &[0.0; 3], &[0.0, 0.0, 0.8]).unwrap();
        assert!((e.coords[2] - 0.4).abs() < 1e-10);
        let z = exp_coords(&f, &[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(z.coords, vec![0.0; 3]);
        assert_eq!(z.residual, 0.0);
    }

    #[test]
    fn quasi_norm_values() {
        let f = build_builtin_frame(Builtin::Heisenberg1);
        let o = [0.0; 3];
        for eps in [0.0, 0.1, 1.0] {
            assert!((quasi_norm_equiregular(&f, &o, &[1.0, 0.0, 0.0], eps).unwrap() - 1.0).abs() < 1e-9);
        }
        let v = quasi_norm_equiregular(&f, &o, &[0.0, 0.0, 1.0], 0.0).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(!box_ball_membership(&f, &o, &[0.0, 0.0, 1.0], 0.5, 0.0).unwrap());
        assert!(box_ball_membership(&f, &o, &o, 1e-3, 0.0).unwrap());
    }

    #[test]
    fn rototranslation_roundtrip() {
        let f = build_builtin_frame(Builtin::Rototranslation);
        let x0 = [0.1, 0.2, 0.5];
        let x = [0.25, 0.1, 0.9];
        let e = exp_coords(&f, &x0, &x).unwrap();
        let back = flow_map(&f, &e.basis, &e.coords, &x0);
        for k in 0..3 {
            assert!((back[k] - x[k]).abs() < 1e-7);
        }
    }
}
