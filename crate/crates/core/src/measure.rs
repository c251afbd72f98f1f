//! Ball volumes, NSW volume polynomials, doubling and Poincaré ratios.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::frames::{horizontal_gradient, EpsFrame};
use crate::geodesy::{gauge_dist_heis, DistanceField, DistanceGraph, GraphOptions};
use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    Montecarlo,
    LatticeCount,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeEstimate {
    pub center: Vec<f64>,
    pub radius: f64,
    pub eps: f64,
    pub volume: f64,
    pub stderr: f64,
    pub sample_count: usize,
    pub method: VolumeMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct NswTerm {
    pub indices: Vec<usize>,
    pub lambda_abs: f64,
    pub degree: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct NswPolynomial {
    pub terms: Vec<NswTerm>,
}

impl NswPolynomial {
    pub fn value_at(&self, r: f64) -> f64 {
        self.terms.iter().map(|t| t.lambda_abs * r.powi(t.degree as i32)).sum()
    }
}

/// det(X^ε_{i_1}(x), …, X^ε_{i_n}(x)) with 0-based indices.
pub fn lambda_det(ef: &EpsFrame, indices: &[usize], x: &[f64]) -> Result<f64> {
    let n = ef.dim();
    if indices.len() != n {
        return Err(LabError::InvalidParameter(format!("need {n} indices, got {}", indices.len())));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= ef.len()) {
        return Err(LabError::InvalidParameter(format!("field index {bad} out of range")));
    }
    for a in 0..n {
        for b in a + 1..n {
            if indices[a] == indices[b] {
                return Ok(0.0);
            }
        }
    }
    let mut m = DMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for (c, &i) in indices.iter().enumerate() {
        ef.eval(i, x, &mut col);
        for r in 0..n {
            m[(r, c)] = col[r];
        }
    }
    Ok(m.determinant())
}

fn combinations(len: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, len: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..len {
            if len - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, len, k, cur, out);
            cur.pop();
        }
    }
    rec(0, len, k, &mut cur, &mut out);
    out
}

/// All strictly increasing n-tuples with nonzero λ.
pub fn nsw_polynomial(ef: &EpsFrame, x: &[f64]) -> Result<NswPolynomial> {
    let mut terms = Vec::new();
    for idx in combinations(ef.len(), ef.dim()) {
        let l = lambda_det(ef, &idx, x)?.abs();
        if l > 1e-14 {
            let degree = idx.iter().map(|&i| ef.degree(i)).sum();
            terms.push(NswTerm { indices: idx, lambda_abs: l, degree });
        }
    }
    Ok(NswPolynomial { terms })
}

pub fn nsw_volume(ef: &EpsFrame, x: &[f64], r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(LabError::InvalidParameter("radius must be positive".into()));
    }
    Ok(nsw_polynomial(ef, x)?.value_at(r))
}

/// Resolution of lattices adapted to a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallResolution {
    /// Nodes per half-width along horizontal axes.
    pub half_nodes: usize,
    /// Largest half-count allowed on any axis.
    pub max_half_nodes: usize,
    /// Use vertical spacing equal to the horizontal spacing squared when the
    /// node budget allows it (exact landing of horizontal moves on
    /// polynomial frames such as ℍ¹).
    pub commensurate: bool,
}

impl Default for BallResolution {
    fn default() -> Self {
        BallResolution { half_nodes: 14, max_half_nodes: 90, commensurate: true }
    }
}

/// Box half-widths expected to contain B_ε(center, r).
pub fn ball_half_widths(ef: &EpsFrame, center: &[f64], r: f64) -> Vec<f64> {
    let n = ef.dim();
    let mut w = vec![0.0f64; n];
    let mut v = vec![0.0; n];
    for i in 0..ef.p() {
        ef.eval(i, center, &mut v);
        for a in 0..n {
            w[a] = w[a].max(r * v[a].abs());
        }
    }
    let frame = &ef.base;
    for k in frame.m..frame.p() {
        frame.eval(k, center, &mut v);
        let s = r.powi(frame.degrees[k] as i32) / (2.0 * std::f64::consts::PI);
        for a in 0..n {
            w[a] += s * v[a].abs();
        }
    }
    w.iter().map(|x| 1.15 * if *x > 0.0 { *x } else { r }).collect()
}

/// Lattice around `center` sized for the ball of radius `r`, with optional
/// per-axis enlargement factors.
pub fn ball_lattice(ef: &EpsFrame, center: &[f64], r: f64, res: &BallResolution, grow: &[f64]) -> Result<Lattice> {
    let n = ef.dim();
    let w: Vec<f64> = ball_half_widths(ef, center, r).iter().zip(grow).map(|(a, g)| a * g).collect();
    let mut horizontal = vec![false; n];
    let mut v = vec![0.0; n];
    for i in 0..ef.m() {
        ef.eval(i, center, &mut v);
        for a in 0..n {
            if v[a].abs() > 1e-12 {
                horizontal[a] = true;
            }
        }
    }
    let hn = res.half_nodes.max(2);
    let hh = (0..n).filter(|&a| horizontal[a]).map(|a| w[a]).fold(0.0, f64::max) / hn as f64;
    let mut spacing = vec![0.0; n];
    let mut half = vec![0usize; n];
    let mut periodic = vec![false; n];
    for a in 0..n {
        if ef.base.periodic[a] && w[a] >= 0.9 * std::f64::consts::PI {
            periodic[a] = true;
            let count = ((2.0 * std::f64::consts::PI) / (w[a] / hn as f64)).ceil() as usize;
            half[a] = count.min(2 * res.max_half_nodes).max(8);
            continue;
        }
        if horizontal[a] {
            spacing[a] = hh;
            half[a] = (w[a] / hh).ceil() as usize;
        } else {
            let fine = hh * hh;
            let count = (w[a] / fine).ceil() as usize;
            if res.commensurate && count <= res.max_half_nodes && count >= 2 {
                spacing[a] = fine;
                half[a] = count;
            } else if res.commensurate && count < 2 {
                let q = (2.0 * fine / w[a]).ceil().max(1.0);
                spacing[a] = fine / q;
                half[a] = (w[a] / spacing[a]).ceil() as usize;
            } else {
                spacing[a] = w[a] / hn as f64;
                half[a] = hn;
            }
        }
        half[a] = half[a].clamp(1, res.max_half_nodes);
    }
    let mut c = center.to_vec();
    for a in 0..n {
        if periodic[a] {
            c[a] = 0.0;
        }
    }
    let lat = Lattice::centered(&c, &half, &spacing, &periodic)?;
    Ok(lat)
}

/// Distance field from a ball center on a lattice, used for volumes,
/// doubling and Poincaré ratios.
#[derive(Debug, Clone)]
pub struct BallProbe {
    pub center: Vec<f64>,
    pub eps: f64,
    pub lat: Lattice,
    pub field: DistanceField,
    /// Smallest distance reached on the outer faces.
    pub boundary_distance: f64,
    gauge_constant: Option<f64>,
}

impl BallProbe {
    pub fn new(ef: &EpsFrame, lat: &Lattice, center: &[f64], opts: &GraphOptions) -> Result<Self> {
        lat.check_contains(center)?;
        let graph = DistanceGraph::build(ef, lat, opts)?;
        let src = lat.nearest(center).ok_or_else(|| LabError::OutOfDomain("center outside lattice".into()))?;
        let field = graph.from_node(src);
        Ok(Self::from_field(ef, lat.clone(), center, field))
    }

    pub fn from_field(ef: &EpsFrame, lat: Lattice, center: &[f64], field: DistanceField) -> Self {
        let boundary_distance =
            (0..lat.len()).filter(|&i| lat.is_boundary(i)).map(|i| field.values[i]).fold(f64::INFINITY, f64::min);
        let gauge_constant = (ef.base.name == "heisenberg1").then(|| {
            let mut a = 1.0f64;
            for i in 0..lat.len() {
                let d = field.values[i];
                if !d.is_finite() || d <= 0.0 {
                    continue;
                }
                let g = gauge_dist_heis(&lat.point(i), center, ef.eps);
                if g > 0.0 {
                    a = a.max(d / g).max(g / d);
                }
            }
            a * 1.05
        });
        BallProbe { center: center.to_vec(), eps: ef.eps, lat, field, boundary_distance, gauge_constant }
    }

    /// Ball adapted to radius `r_max`; the box grows until the ball of radius
    /// `r_max` stays off its faces.
    pub fn adapted(ef: &EpsFrame, center: &[f64], r_max: f64, res: &BallResolution) -> Result<Self> {
        Self::adapted_with(ef, center, r_max, res, &|lat: &Lattice| Self::new(ef, lat, center, &GraphOptions::default()))
    }

    /// As `adapted`, with the probe on each trial lattice built by `make`
    /// (used to put a cache in front of the graph search).
    pub fn adapted_with(
        ef: &EpsFrame,
        center: &[f64],
        r_max: f64,
        res: &BallResolution,
        make: &dyn Fn(&Lattice) -> Result<Self>,
    ) -> Result<Self> {
        let n = ef.dim();
        let mut grow = vec![1.0; n];
        for _ in 0..6 {
            let lat = ball_lattice(ef, center, r_max, res, &grow)?;
            let probe = make(&lat)?;
            let mut touched = false;
            for a in 0..n {
                if lat.periodic[a] {
                    continue;
                }
                let face_min = (0..lat.len())
                    .filter(|&i| {
                        let k = lat.axis_index(i, a);
                        k == 0 || k + 1 == lat.counts[a]
                    })
                    .map(|i| probe.field.values[i])
                    .fold(f64::INFINITY, f64::min);
                if face_min <= r_max * 1.02 {
                    grow[a] *= 1.4;
                    touched = true;
                }
            }
            if !touched {
                return Ok(probe);
            }
        }
        Err(LabError::ResolutionTooCoarse(format!("could not fit a ball of radius {r_max} in an adapted lattice")))
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if !(r > 0.0) {
            return Err(LabError::InvalidParameter("radius must be positive".into()));
        }
        if self.boundary_distance <= r {
            return Err(LabError::OutOfDomain(format!(
                "ball of radius {r} reaches the lattice boundary (boundary distance {:.4})",
                self.boundary_distance
            )));
        }
        Ok(())
    }

    /// Axis-aligned box around the nodes inside B(r), padded by one cell.
    fn bounding_box(&self, r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.lat.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        let mut x = vec![0.0; n];
        let mut any = false;
        for i in 0..self.lat.len() {
            if self.field.values[i] < r {
                any = true;
                self.lat.coord(i, &mut x);
                for a in 0..n {
                    let mut v = x[a];
                    if self.lat.periodic[a] {
                        let d = v - self.center[a];
                        v = self.center[a] + d - crate::lattice::TWO_PI * (d / crate::lattice::TWO_PI).round();
                    }
                    lo[a] = lo[a].min(v);
                    hi[a] = hi[a].max(v);
                }
            }
        }
        if !any {
            return Err(LabError::ResolutionTooCoarse(format!("no lattice node inside the ball of radius {r}")));
        }
        for a in 0..n {
            lo[a] -= self.lat.spacing[a];
            hi[a] += self.lat.spacing[a];
            if !self.lat.periodic[a] {
                lo[a] = lo[a].max(self.lat.lower[a]);
                hi[a] = hi[a].min(self.lat.upper(a));
            }
        }
        Ok((lo, hi))
    }

    fn inside(&self, x: &[f64], r: f64) -> bool {
        if let Some(a) = self.gauge_constant {
            let g = gauge_dist_heis(x, &self.center, self.eps);
            if g * a < r {
                return true;
            }
            if g > a * r {
                return false;
            }
        }
        self.field.at(&self.lat, x) < r
    }

    /// Monte-Carlo volume of B(center, r).
    pub fn volume_mc(&self, r: f64, samples: usize, seed: u64) -> Result<VolumeEstimate> {
        self.check_radius(r)?;
        if samples < 10_000 {
            return Err(LabError::InvalidParameter("at least 10⁴ samples required".into()));
        }
        let (lo, hi) = self.bounding_box(r)?;
        let n = lo.len();
        let batch = 8192;
        let nb = samples.div_ceil(batch);
        let counts = crate::par::map_range(nb, |b| {
            let mut rng = crate::rng::stream(seed, b as u64);
            let todo = batch.min(samples - b * batch);
            let mut x = vec![0.0; n];
            let mut hits = 0usize;
            for _ in 0..todo {
                for a in 0..n {
                    x[a] = lo[a] + (hi[a] - lo[a]) * rng.random::<f64>();
                }
                if self.inside(&x, r) {
                    hits += 1;
                }
            }
            hits
        });
        let hits: usize = counts.iter().sum();
        let boxvol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        let frac = hits as f64 / samples as f64;
        Ok(VolumeEstimate {
            center: self.center.clone(),
            radius: r,
            eps: self.eps,
            volume: frac * boxvol,
            stderr: (frac * (1.0 - frac) / samples as f64).sqrt() * boxvol,
            sample_count: samples,
            method: VolumeMethod::Montecarlo,
        })
    }

    /// Counting-measure volume: nodes inside the ball times the cell volume.
    pub fn volume_count(&self, r: f64) -> Result<VolumeEstimate> {
        self.check_radius(r)?;
        let count = self.field.values.iter().filter(|d| **d < r).count();
        if count == 0 {
            return Err(LabError::ResolutionTooCoarse(format!("no lattice node inside the ball of radius {r}")));
        }
        let cv = self.lat.cell_volume();
        Ok(VolumeEstimate {
            center: self.center.clone(),
            radius: r,
            eps: self.eps,
            volume: count as f64 * cv,
            stderr: 0.0,
            sample_count: count,
            method: VolumeMethod::LatticeCount,
        })
    }
}

pub fn ball_volume_mc(ef: &EpsFrame, lat: &Lattice, x: &[f64], r: f64, samples: usize, seed: u64) -> Result<VolumeEstimate> {
    BallProbe::new(ef, lat, x, &GraphOptions::default())?.volume_mc(r, samples, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct DoublingResult {
    pub ratio: f64,
    pub stderr: f64,
    pub small: VolumeEstimate,
    pub large: VolumeEstimate,
}

impl BallProbe {
    pub fn doubling(&self, r: f64, samples: usize, seed: u64) -> Result<DoublingResult> {
        let small = self.volume_mc(r, samples, seed)?;
        let large = self.volume_mc(2.0 * r, samples, crate::rng::derive(seed, "doubling-large"))?;
        if small.volume <= 0.0 {
            return Err(LabError::ResolutionTooCoarse(format!("empty ball at radius {r}")));
        }
        let ratio = large.volume / small.volume;
        let rel = ((small.stderr / small.volume).powi(2) + (large.stderr / large.volume.max(1e-300)).powi(2)).sqrt();
        Ok(DoublingResult { ratio, stderr: ratio * rel, small, large })
    }
}

pub fn doubling_ratio(ef: &EpsFrame, lat: &Lattice, x: &[f64], r: f64, samples: usize, seed: u64) -> Result<DoublingResult> {
    BallProbe::new(ef, lat, x, &GraphOptions::default())?.doubling(r, samples, seed)
}

/// Doubling ratio with each ball measured on its own adapted lattice, so
/// both radii see the same relative resolution.
pub fn doubling_adapted(ef: &EpsFrame, x: &[f64], r: f64, samples: usize, seed: u64, res: &BallResolution) -> Result<DoublingResult> {
    let small = BallProbe::adapted(ef, x, r, res)?;
    let large = BallProbe::adapted(ef, x, 2.0 * r, res)?;
    doubling_pair(&small, &large, r, samples, seed)
}

/// Doubling ratio from a probe adapted to r and one adapted to 2r.
pub fn doubling_pair(small: &BallProbe, large: &BallProbe, r: f64, samples: usize, seed: u64) -> Result<DoublingResult> {
    let small = small.volume_mc(r, samples, seed)?;
    let large = large.volume_mc(2.0 * r, samples, crate::rng::derive(seed, "doubling-large"))?;
    if small.volume <= 0.0 {
        return Err(LabError::ResolutionTooCoarse(format!("empty ball at radius {r}")));
    }
    let ratio = large.volume / small.volume;
    let rel = ((small.stderr / small.volume).powi(2) + (large.stderr / large.volume.max(1e-300)).powi(2)).sqrt();
    Ok(DoublingResult { ratio, stderr: ratio * rel, small, large })
}

/// Test function for the Poincaré probe.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name)
    }
}

/// Coordinates, pairwise products, three seeded bumps and a mollified step
/// across x1 = center1, all in coordinates normalized by `scale`.
pub fn default_test_functions(center: &[f64], scale: &[f64], seed: u64) -> Vec<TestFunction> {
    let n = center.len();
    let c = Arc::new(center.to_vec());
    let s = Arc::new(scale.to_vec());
    let mut out = Vec::new();
    for a in 0..n {
        let (c, s) = (c.clone(), s.clone());
        out.push(TestFunction { name: format!("x{}", a + 1), f: Arc::new(move |x| (x[a] - c[a]) / s[a]) });
    }
    for a in 0..n {
        for b in a..n {
            let (c, s) = (c.clone(), s.clone());
            out.push(TestFunction {
                name: format!("x{}*x{}", a + 1, b + 1),
                f: Arc::new(move |x| (x[a] - c[a]) / s[a] * (x[b] - c[b]) / s[b]),
            });
        }
    }
    let mut rng = crate::rng::stream(seed, 0xb0b);
    for k in 0..3 {
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let width: f64 = rng.random_range(0.3..0.8);
        let (c, s) = (c.clone(), s.clone());
        out.push(TestFunction {
            name: format!("bump{}", k + 1),
            f: Arc::new(move |x| {
                let d2: f64 = (0..x.len()).map(|a| ((x[a] - c[a]) / s[a] - mu[a]).powi(2)).sum();
                (-d2 / (2.0 * width * width)).exp()
            }),
        });
    }
    let (c0, s0) = (center[0], scale[0]);
    out.push(TestFunction { name: "step_x1".into(), f: Arc::new(move |x| ((x[0] - c0) / (0.2 * s0)).tanh()) });
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    pub max_ratio: f64,
    pub argmax: String,
    pub ratios: Vec<(String, f64)>,
}

impl BallProbe {
    /// max over test functions of ∫_B|u − u_B| / (r ∫_{2B} |∇^ε u|), lattice sums.
    pub fn poincare(&self, ef: &EpsFrame, r: f64, tests: &[TestFunction]) -> Result<PoincareReport> {
        self.check_radius(2.0 * r)?;
        let inner: Vec<usize> = (0..self.lat.len()).filter(|&i| self.field.values[i] < r).collect();
        let outer: Vec<usize> = (0..self.lat.len()).filter(|&i| self.field.values[i] < 2.0 * r).collect();
        if inner.len() < 2 {
            return Err(LabError::ResolutionTooCoarse(format!("ball of radius {r} has {} nodes", inner.len())));
        }
        let mut ratios = Vec::new();
        for t in tests {
            let u = self.lat.sample(|x| (t.f)(x));
            let mean = inner.iter().map(|&i| u[i]).sum::<f64>() / inner.len() as f64;
            let num: f64 = inner.iter().map(|&i| (u[i] - mean).abs()).sum();
            let mut den = 0.0;
            for &i in &outer {
                let g = horizontal_gradient(ef, &self.lat, &u, i)?;
                den += g.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            den *= r;
            if num <= 1e-12 * inner.len() as f64 || den <= 1e-300 {
                continue;
            }
            ratios.push((t.name.clone(), num / den));
        }
        let (argmax, max_ratio) = ratios
            .iter()
            .cloned()
            .fold((String::new(), 0.0), |acc, (n, v)| if v > acc.1 { (n, v) } else { acc });
        Ok(PoincareReport { max_ratio, argmax, ratios })
    }
}

pub fn poincare_ratio(ef: &EpsFrame, lat: &Lattice, x: &[f64], r: f64, tests: &[TestFunction]) -> Result<PoincareReport> {
    BallProbe::new(ef, lat, x, &GraphOptions::default())?.poincare(ef, r, tests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{build_builtin_frame, make_eps_frame, Builtin};

    fn h1(eps: f64) -> EpsFrame {
        make_eps_frame(Arc::new(build_builtin_frame(Builtin::Heisenberg1)), eps).unwrap()
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_det(&h1(1.0), &[0, 1, 2], &[0.3, 0.1, 0.0]).unwrap(), 2.0);
        assert_eq!(lambda_det(&h1(0.5), &[0, 1, 2], &[0.3, 0.1, 0.0]).unwrap(), 1.0);
        assert_eq!(lambda_det(&h1(0.5), &[0, 0, 2], &[0.3, 0.1, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn nsw_examples() {
        // tuple enumeration by hand: (X1,X2,εY3) gives 2ε r³, (X1,X2,Y3) gives 2 r⁴
        assert!((nsw_volume(&h1(0.0), &[0.0; 3], 0.5).unwrap() - 0.125).abs() < 1e-15);
        let r: f64 = 0.3;
        let v = nsw_volume(&h1(1.0), &[0.0; 3], r).unwrap();
        assert!((v - (2.0 * r.powi(3) + 2.0 * r.powi(4))).abs() < 1e-14);
        let e3 = make_eps_frame(Arc::new(build_builtin_frame(Builtin::Euclidean(3))), 0.7).unwrap();
        assert!((nsw_volume(&e3, &[0.0; 3], 0.4).unwrap() - 0.064).abs() < 1e-15);
        assert_eq!(nsw_polynomial(&h1(1.0), &[0.0; 3]).unwrap().terms.len(), 2);
    }

    #[test]
    fn combination_count() {
        assert_eq!(combinations(16, 5).len(), 4368);
        assert_eq!(combinations(4, 3).len(), 4);
    }
}
