//! Heat kernels of ∂_t − Σ a_ij X_i^ε X_j^ε: finite differences, stochastic
//! flows, Gaussian envelopes, the ℍ¹ lift and Harnack ratios.

mod fd;
mod fit;
mod harnack;
mod lift;
mod mc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::lattice::Lattice;

pub use fd::{build_operator, discrete_delta, heat_fd, heat_fd_from, identity, FdOperator, FdOptions};
pub use fit::{gaussian_fit, GaussianFit};
pub use harnack::{harnack_ratio, Cylinders, HarnackReport};
pub use lift::{lift_h1_kernel, lifted_distance, lifted_h1_frame, marginalize};
pub use mc::{heat_mc, McOptions};
pub(crate) use fd::{field_step, foot_weights};

/// Symmetric p×p coefficient matrix with ellipticity constant Λ.
#[derive(Debug, Clone)]
pub struct CoeffMatrix {
    pub a: DMatrix<f64>,
    pub lambda: f64,
}

impl CoeffMatrix {
    /// Checks symmetry, (1/2)Λ⁻¹ ≤ eig(A) ≤ 2Λ, and Λ⁻¹ ≤ eig ≤ Λ on the
    /// leading m×m block.
    pub fn new(a: DMatrix<f64>, lambda: f64, m: usize) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p || p == 0 {
            return Err(LabError::InvalidParameter("coefficient matrix must be square".into()));
        }
        if !(lambda >= 1.0) {
            return Err(LabError::InvalidParameter("ellipticity constant must be ≥ 1".into()));
        }
        for i in 0..p {
            for j in 0..p {
                if a[(i, j)] != a[(j, i)] {
                    return Err(LabError::InvalidParameter(format!("A is not symmetric at ({i},{j})")));
                }
            }
        }
        let tol = 1e-12;
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        if eig.iter().any(|&e| e < 0.5 / lambda - tol || e > 2.0 * lambda + tol) {
            return Err(LabError::InvalidParameter(format!("eigenvalues {eig:?} outside [1/(2Λ), 2Λ]")));
        }
        let m = m.min(p);
        let block = a.view((0, 0), (m, m)).into_owned();
        let eb = SymmetricEigen::new(block).eigenvalues;
        if eb.iter().any(|&e| e < 1.0 / lambda - tol || e > lambda + tol) {
            return Err(LabError::InvalidParameter(format!("horizontal eigenvalues {eb:?} outside [1/Λ, Λ]")));
        }
        Ok(CoeffMatrix { a, lambda })
    }

    pub fn is_identity(&self) -> bool {
        let p = self.a.nrows();
        (0..p).all(|i| (0..p).all(|j| self.a[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMethod {
    FiniteDifference,
    MonteCarlo,
}

/// Kernel samples on lattice nodes at a ladder of times.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub lat: Lattice,
    pub source: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub method: KernelMethod,
    /// Time step of the scheme or of the stochastic flow.
    pub dt: f64,
}

impl KernelField {
    /// Snapshot whose time is closest to t.
    pub fn snapshot(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    pub fn at(&self, snap: usize, x: &[f64]) -> f64 {
        self.lat.interpolate(&self.values[snap], x).unwrap_or(0.0)
    }

    /// Mean over the (2r+1)^n block of nodes around the node nearest x.
    pub fn block_mean(&self, snap: usize, x: &[f64], r: usize) -> Result<f64> {
        let c = self.lat.nearest(x).ok_or_else(|| LabError::OutOfDomain("probe outside lattice".into()))?;
        let n = self.lat.dim();
        let mut base = vec![0usize; n];
        self.lat.multi(c, &mut base);
        let side = 2 * r + 1;
        let total = side.pow(n as u32);
        let mut sum = 0.0;
        let mut m = vec![0usize; n];
        for k in 0..total {
            let mut rest = k;
            for a in 0..n {
                let off = rest % side;
                rest /= side;
                let v = base[a] as isize + off as isize - r as isize;
                if v < 0 || v as usize >= self.lat.counts[a] {
                    return Err(LabError::OutOfDomain("probe block leaves the lattice".into()));
                }
                m[a] = v as usize;
            }
            sum += self.values[snap][self.lat.index(&m)];
        }
        Ok(sum / total as f64)
    }

    /// Relative L¹ distance Σ|a − b| / Σ|a| after summing mass over blocks of
    /// `block` nodes per axis.
    pub fn l1_gap(&self, snap: usize, other: &KernelField, other_snap: usize, block: usize) -> Result<f64> {
        if self.lat.counts != other.lat.counts {
            return Err(LabError::InvalidParameter("kernels live on different lattices".into()));
        }
        let a = coarse(&self.lat, &self.values[snap], block);
        let b = coarse(&other.lat, &other.values[other_snap], block);
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let den: f64 = a.iter().map(|x| x.abs()).sum();
        if den <= 0.0 {
            return Err(LabError::DegenerateDenominator(den));
        }
        Ok(num / den)
    }
}

fn coarse(lat: &Lattice, u: &[f64], block: usize) -> Vec<f64> {
    let n = lat.dim();
    let b = block.max(1);
    let cc: Vec<usize> = lat.counts.iter().map(|c| c.div_ceil(b)).collect();
    let mut out = vec![0.0; cc.iter().product()];
    let mut m = vec![0usize; n];
    for i in 0..lat.len() {
        lat.multi(i, &mut m);
        let mut idx = 0;
        for a in 0..n {
            idx = idx * cc[a] + m[a] / b;
        }
        out[idx] += u[i];
    }
    out
}

/// Lattice for the ℍ¹ kernel at time t: five standard deviations per axis,
/// horizontal spacing `h`; the vertical spacing is h² when that fits in
/// `max_half` nodes, otherwise small enough that interpolating vertical
/// foot points adds about 1% to the vertical diffusion.
pub fn h1_heat_lattice(eps: f64, t: f64, h: f64, max_half: usize) -> Result<Lattice> {
    if !(t > 0.0 && h > 0.0) {
        return Err(LabError::InvalidParameter("t and h must be positive".into()));
    }
    let wh = 5.0 * (2.0 * t).sqrt();
    let wz = 5.0 * (8.0 * eps * eps * t + 4.0 * t * t).sqrt();
    let hh = (wh / h).ceil() as usize;
    let fine = h * h;
    let hz = if (wz / fine).ceil() as usize <= max_half {
        fine
    } else {
        (0.4 * eps * h).max(wz / max_half as f64)
    };
    let hzn = (wz / hz).ceil() as usize;
    Lattice::centered(&[0.0; 3], &[hh, hh, hzn], &[h, h, hz], &[false; 3])
}
