//! Rectangular sample grids with optional periodic axes.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lower: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
    pub periodic: Vec<bool>,
    strides: Vec<usize>,
}

impl Lattice {
    /// Grid with `counts[k]` nodes on axis k. Non-periodic axes include both
    /// endpoints; periodic axes must span exactly 2π and omit the upper end.
    pub fn new(lower: &[f64], upper: &[f64], counts: &[usize], periodic: &[bool]) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || counts.len() != n || periodic.len() != n || n == 0 {
            return Err(LabError::InvalidParameter("lattice axis lists differ in length".into()));
        }
        let mut spacing = Vec::with_capacity(n);
        for k in 0..n {
            if counts[k] < 3 {
                return Err(LabError::InvalidParameter(format!("axis {k} needs at least 3 nodes")));
            }
            let span = upper[k] - lower[k];
            if !(span > 0.0) {
                return Err(LabError::InvalidParameter(format!("axis {k} has empty span")));
            }
            if periodic[k] {
                if (span - TWO_PI).abs() > 1e-9 {
                    return Err(LabError::InvalidParameter(format!("periodic axis {k} must span 2π")));
                }
                spacing.push(TWO_PI / counts[k] as f64);
            } else {
                spacing.push(span / (counts[k] - 1) as f64);
            }
        }
        Self::from_parts(lower.to_vec(), spacing, counts.to_vec(), periodic.to_vec())
    }

    /// Grid from explicit spacing; the spacing is kept exactly, which keeps
    /// commensurate grids (e.g. vertical step = horizontal step squared) exact.
    pub fn from_parts(lower: Vec<f64>, spacing: Vec<f64>, counts: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        let n = lower.len();
        if spacing.len() != n || counts.len() != n || periodic.len() != n {
            return Err(LabError::InvalidParameter("lattice axis lists differ in length".into()));
        }
        for k in 0..n {
            if !(spacing[k] > 0.0) || counts[k] < 3 {
                return Err(LabError::InvalidParameter(format!("bad spacing or count on axis {k}")));
            }
            if periodic[k] && (spacing[k] * counts[k] as f64 - TWO_PI).abs() > 1e-9 {
                return Err(LabError::InvalidParameter(format!("periodic axis {k} must span 2π")));
            }
        }
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        Ok(Lattice { lower, spacing, counts, periodic, strides })
    }

    /// Symmetric grid around `center` with `2*half[k]+1` nodes per
    /// non-periodic axis; periodic axes get `periodic_count` nodes.
    pub fn centered(center: &[f64], half: &[usize], spacing: &[f64], periodic: &[bool]) -> Result<Self> {
        let n = center.len();
        let mut lower = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        let mut sp = Vec::with_capacity(n);
        for k in 0..n {
            if periodic[k] {
                let c = half[k].max(3);
                counts.push(c);
                sp.push(TWO_PI / c as f64);
                lower.push(0.0);
            } else {
                counts.push(2 * half[k] + 1);
                sp.push(spacing[k]);
                lower.push(center[k] - half[k] as f64 * spacing[k]);
            }
        }
        Self::from_parts(lower, sp, counts, periodic.to_vec())
    }

    /// Uniform grid over a box with roughly spacing `h` on every axis.
    pub fn uniform(lower: &[f64], upper: &[f64], h: f64, periodic: &[bool]) -> Result<Self> {
        let counts: Vec<usize> = (0..lower.len())
            .map(|k| {
                let span = upper[k] - lower[k];
                if periodic[k] {
                    ((span / h).round() as usize).max(3)
                } else {
                    ((span / h).round() as usize + 1).max(3)
                }
            })
            .collect();
        Self::new(lower, upper, &counts, periodic)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self, k: usize) -> f64 {
        if self.periodic[k] {
            self.lower[k] + TWO_PI
        } else {
            self.lower[k] + (self.counts[k] - 1) as f64 * self.spacing[k]
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn box_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.upper(k) - self.lower[k]).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|k| (self.upper(k) - self.lower[k]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi(&self, mut idx: usize, out: &mut [usize]) {
        for k in 0..self.dim() {
            out[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
    }

    pub fn coord(&self, idx: usize, out: &mut [f64]) {
        let mut rest = idx;
        for k in 0..self.dim() {
            let i = rest / self.strides[k];
            rest %= self.strides[k];
            out[k] = self.lower[k] + i as f64 * self.spacing[k];
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.coord(idx, &mut p);
        p
    }

    /// Axis index of node `idx` along axis `k`.
    pub fn axis_index(&self, idx: usize, k: usize) -> usize {
        (idx / self.strides[k]) % self.counts[k]
    }

    /// Neighbor `off` steps along `axis`, wrapping on periodic axes.
    pub fn shift(&self, idx: usize, axis: usize, off: i64) -> Option<usize> {
        let i = self.axis_index(idx, axis) as i64;
        let c = self.counts[axis] as i64;
        let j = i + off;
        let j = if self.periodic[axis] {
            j.rem_euclid(c)
        } else if j < 0 || j >= c {
            return None;
        } else {
            j
        };
        Some((idx as i64 + (j - i) * self.strides[axis] as i64) as usize)
    }

    /// Shift by a whole offset vector.
    pub fn offset(&self, idx: usize, off: &[i64]) -> Option<usize> {
        let mut out = idx;
        for (k, &o) in off.iter().enumerate() {
            if o != 0 {
                out = self.shift(out, k, o)?;
            }
        }
        Some(out)
    }

    /// True when the node sits on the outer face of a non-periodic axis.
    pub fn is_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|k| {
            if self.periodic[k] {
                return false;
            }
            let i = self.axis_index(idx, k);
            i == 0 || i + 1 == self.counts[k]
        })
    }

    /// Distance, in nodes, to the nearest non-periodic face.
    pub fn boundary_depth(&self, idx: usize) -> usize {
        let mut d = usize::MAX;
        for k in 0..self.dim() {
            if self.periodic[k] {
                continue;
            }
            let i = self.axis_index(idx, k);
            d = d.min(i).min(self.counts[k] - 1 - i);
        }
        d
    }

    pub fn wrap_axis(&self, k: usize, v: f64) -> f64 {
        if self.periodic[k] {
            self.lower[k] + (v - self.lower[k]).rem_euclid(TWO_PI)
        } else {
            v
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = 1e-12;
        (0..self.dim()).all(|k| {
            self.periodic[k] || (x[k] >= self.lower[k] - tol * self.spacing[k] && x[k] <= self.upper(k) + tol * self.spacing[k])
        })
    }

    pub fn check_contains(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LabError::InvalidParameter(format!("point has {} coordinates, lattice has {}", x.len(), self.dim())));
        }
        if !self.contains(x) {
            return Err(LabError::OutOfDomain(format!("{x:?} outside lattice box")));
        }
        Ok(())
    }

    /// Nearest node, or `None` outside the box.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx = 0;
        for k in 0..self.dim() {
            let t = (self.wrap_axis(k, x[k]) - self.lower[k]) / self.spacing[k];
            let mut i = t.round() as i64;
            if self.periodic[k] {
                i = i.rem_euclid(self.counts[k] as i64);
            } else {
                i = i.clamp(0, self.counts[k] as i64 - 1);
            }
            idx += i as usize * self.strides[k];
        }
        Some(idx)
    }

    /// Multilinear interpolation stencil: calls `f(node, weight)` for every
    /// corner with positive weight. Returns false outside the box.
    pub fn stencil(&self, x: &[f64], mut f: impl FnMut(usize, f64)) -> bool {
        let n = self.dim();
        let mut base = [0usize; 8];
        let mut next = [0usize; 8];
        let mut frac = [0f64; 8];
        debug_assert!(n <= 8);
        for k in 0..n {
            let v = self.wrap_axis(k, x[k]);
            let t = (v - self.lower[k]) / self.spacing[k];
            let c = self.counts[k];
            if self.periodic[k] {
                let i0 = (t.floor() as i64).rem_euclid(c as i64) as usize;
                base[k] = i0;
                next[k] = (i0 + 1) % c;
                frac[k] = (t - t.floor()).clamp(0.0, 1.0);
            } else {
                if t < -1e-9 || t > (c - 1) as f64 + 1e-9 {
                    return false;
                }
                let t = t.clamp(0.0, (c - 1) as f64);
                let i0 = (t.floor() as usize).min(c - 2);
                base[k] = i0;
                next[k] = i0 + 1;
                frac[k] = t - i0 as f64;
            }
        }
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..n {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    idx += next[k] * self.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                    idx += base[k] * self.strides[k];
                }
                if w == 0.0 {
                    break;
                }
            }
            if w > 0.0 {
                f(idx, w);
            }
        }
        true
    }

    /// Multilinear interpolation of nodal values; `None` outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let mut acc = 0.0;
        let inside = self.stencil(x, |i, w| acc += w * values[i]);
        inside.then_some(acc)
    }

    /// Centered first difference of `u` along axis `k` at node `idx`.
    pub fn partial(&self, u: &[f64], idx: usize, k: usize) -> Option<f64> {
        let p = self.shift(idx, k, 1)?;
        let m = self.shift(idx, k, -1)?;
        Some((u[p] - u[m]) / (2.0 * self.spacing[k]))
    }

    /// Nodal samples of a function.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
        let n = self.dim();
        crate::par::map_range(self.len(), |i| {
            let mut x = [0.0; 8];
            self.coord(i, &mut x[..n]);
            f(&x[..n])
        })
    }

    /// Stable textual key, used for cache file names.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for k in 0..self.dim() {
            s.push_str(&format!(
                "{:016x}:{:016x}:{}:{};",
                self.lower[k].to_bits(),
                self.spacing[k].to_bits(),
                self.counts[k],
                self.periodic[k] as u8
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_coords() {
        let lat = Lattice::new(&[0.0, -1.0, 0.0], &[1.0, 1.0, TWO_PI], &[3, 5, 8], &[false, false, true]).unwrap();
        assert_eq!(lat.len(), 120);
        let mut m = [0usize; 3];
        for i in 0..lat.len() {
            lat.multi(i, &mut m);
            assert_eq!(lat.index(&m), i);
        }
        let p = lat.point(lat.index(&[2, 4, 7]));
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
        assert!((p[2] - 7.0 * TWO_PI / 8.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_shift_wraps() {
        let lat = Lattice::new(&[0.0, 0.0], &[1.0, TWO_PI], &[3, 4], &[false, true]).unwrap();
        let i = lat.index(&[1, 3]);
        assert_eq!(lat.shift(i, 1, 1), Some(lat.index(&[1, 0])));
        assert_eq!(lat.shift(i, 0, 2), None);
        assert!(!lat.is_boundary(i));
        assert!(lat.is_boundary(lat.index(&[0, 2])));
    }

    #[test]
    fn interpolation_is_exact_for_multilinear() {
        let lat = Lattice::new(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0], &[5, 7, 9], &[false; 3]).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[2] + x[0] * x[1] * x[2];
        let vals = lat.sample(f);
        for x in [[0.13, -0.77, 0.5], [1.0, 1.0, 1.0], [-1.0, 0.0, 0.99]] {
            let v = lat.interpolate(&vals, &x).unwrap();
            assert!((v - f(&x)).abs() < 1e-12, "{v} vs {}", f(&x));
        }
        assert!(lat.interpolate(&vals, &[1.2, 0.0, 0.0]).is_none());
    }

    #[test]
    fn rejects_bad_periodic_span() {
        assert!(Lattice::new(&[0.0], &[3.0], &[10], &[true]).is_err());
        assert!(Lattice::new(&[0.0], &[1.0], &[2], &[false]).is_err());
    }
}
