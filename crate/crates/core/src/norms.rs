//! Discrete ε-Hölder and ε-Sobolev norms, the parabolic pseudo-distance
//! max(d_ε, √|Δt|) and Schauder-ratio monitors.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::frames::{horizontal_gradient, EpsFrame};
use crate::geodesy::{DistanceGraph, GraphOptions};
use crate::lattice::Lattice;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParabolicPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

/// Spatial distance used by the norms: exact Euclidean, or the lattice
/// graph distance of an ε-frame.
pub enum SpaceMetric {
    Euclidean(Lattice),
    Graph(Box<DistanceGraph>),
}

impl SpaceMetric {
    pub fn lattice(ef: &EpsFrame, lat: &Lattice) -> Result<Self> {
        Ok(SpaceMetric::Graph(Box::new(DistanceGraph::build(ef, lat, &GraphOptions::default())?)))
    }

    pub fn lat(&self) -> &Lattice {
        match self {
            SpaceMetric::Euclidean(l) => l,
            SpaceMetric::Graph(g) => &g.lat,
        }
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            SpaceMetric::Euclidean(_) => Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
            SpaceMetric::Graph(g) => Ok(g.distance(x, y)?.value),
        }
    }

    /// Distances from node `src` to every node.
    fn from_node(&self, src: usize) -> Vec<f64> {
        match self {
            SpaceMetric::Euclidean(l) => {
                let x = l.point(src);
                (0..l.len()).map(|j| self.dist(&x, &l.point(j)).unwrap_or(f64::INFINITY)).collect()
            }
            SpaceMetric::Graph(g) => g.from_node(src).values,
        }
    }

    /// Nearest-neighbor pairs: graph edges, or ±1 axis steps.
    fn neighbors(&self, node: usize) -> Vec<(usize, f64)> {
        match self {
            SpaceMetric::Euclidean(l) => {
                let mut out = Vec::new();
                for k in 0..l.dim() {
                    for off in [-1, 1] {
                        if let Some(j) = l.shift(node, k, off) {
                            if j != node {
                                out.push((j, l.spacing[k]));
                            }
                        }
                    }
                }
                out
            }
            SpaceMetric::Graph(g) => g.edges(node).collect(),
        }
    }
}

pub fn parabolic_dist(metric: &SpaceMetric, p1: &ParabolicPoint, p2: &ParabolicPoint) -> Result<f64> {
    if p1.x == p2.x && p1.t == p2.t {
        return Ok(0.0);
    }
    let d = if p1.x == p2.x { 0.0 } else { metric.dist(&p1.x, &p2.x)? };
    Ok(d.max((p1.t - p2.t).abs().sqrt()))
}

/// Values on lattice nodes at a ladder of times; NaN marks nodes without
/// enough margin for the stencil that produced the field.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    pub lat: Lattice,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn new(lat: Lattice, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(LabError::InvalidParameter("one value vector per time is required".into()));
        }
        if values.iter().any(|v| v.len() != lat.len()) {
            return Err(LabError::InvalidParameter("field length differs from lattice".into()));
        }
        Ok(SpaceTimeField { lat, times, values })
    }

    pub fn sample(lat: &Lattice, times: &[f64], f: impl Fn(&[f64], f64) -> f64 + Sync) -> Self {
        let values = times.iter().map(|&t| lat.sample(|x| f(x, t))).collect();
        SpaceTimeField { lat: lat.clone(), times: times.to_vec(), values }
    }

    pub fn scale(&self, c: f64) -> Self {
        let values = self.values.iter().map(|v| v.iter().map(|x| c * x).collect()).collect();
        SpaceTimeField { lat: self.lat.clone(), times: self.times.clone(), values }
    }

    pub fn add(&self, other: &SpaceTimeField) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        SpaceTimeField { lat: self.lat.clone(), times: self.times.clone(), values }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub alpha: f64,
    pub sup_norm: f64,
    pub seminorm: f64,
    pub total: f64,
    pub arg_pair: Option<(ParabolicPoint, ParabolicPoint)>,
    pub pairs: usize,
}

/// Number of Dijkstra sources used by sampled pairs.
const SOURCES: usize = 32;

/// sup|u| plus the sampled Hölder seminorm over nodes in `region` (all nodes
/// when `None`) whose values are finite. All pairs are enumerated when there
/// are at most `sample_pairs` of them; otherwise `sample_pairs` seeded pairs
/// plus every nearest-neighbor pair in space and in time.
pub fn holder_norm(
    u: &SpaceTimeField,
    alpha: f64,
    metric: &SpaceMetric,
    sample_pairs: usize,
    seed: u64,
    region: Option<&[bool]>,
) -> Result<HolderReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let lat = &u.lat;
    if metric.lat().counts != lat.counts {
        return Err(LabError::InvalidParameter("metric and field lattices differ".into()));
    }
    let active: Vec<usize> = (0..lat.len())
        .filter(|&i| region.is_none_or(|r| r[i]) && u.values.iter().all(|v| v[i].is_finite()))
        .collect();
    if active.is_empty() {
        return Err(LabError::InvalidParameter("no node with finite values in the region".into()));
    }
    let mut is_active = vec![false; lat.len()];
    active.iter().for_each(|&i| is_active[i] = true);
    let nt = u.times.len();
    let sup_norm = active.iter().flat_map(|&i| u.values.iter().map(move |v| v[i].abs())).fold(0.0, f64::max);

    let mut best = 0.0f64;
    let mut arg: Option<(usize, usize, usize, usize)> = None;
    let mut pairs = 0usize;
    let mut consider = |a: usize, s: usize, b: usize, r: usize, d: f64| {
        let dt = (u.times[s] - u.times[r]).abs().sqrt();
        let dd = d.max(dt);
        if dd <= 0.0 || !dd.is_finite() {
            return;
        }
        pairs += 1;
        let q = (u.values[s][a] - u.values[r][b]).abs() / dd.powf(alpha);
        if q > best {
            best = q;
            arg = Some((a, s, b, r));
        }
    };

    let m = active.len() * nt;
    if m * (m - 1) / 2 <= sample_pairs {
        let fields = crate::par::map_range(active.len(), |k| metric.from_node(active[k]));
        for (ka, &a) in active.iter().enumerate() {
            for s in 0..nt {
                for (kb, &b) in active.iter().enumerate() {
                    for r in 0..nt {
                        if (kb, r) <= (ka, s) {
                            continue;
                        }
                        consider(a, s, b, r, fields[ka][b]);
                    }
                }
            }
        }
    } else {
        let mut rng = crate::rng::stream(seed, 0);
        let sources: Vec<usize> = (0..SOURCES.min(active.len())).map(|_| active[rng.random_range(0..active.len())]).collect();
        let fields = crate::par::map_range(sources.len(), |k| metric.from_node(sources[k]));
        let mut rng = crate::rng::stream(seed, 1);
        for k in 0..sample_pairs {
            let si = k % sources.len();
            let b = active[rng.random_range(0..active.len())];
            let s = rng.random_range(0..nt);
            let r = rng.random_range(0..nt);
            consider(sources[si], s, b, r, fields[si][b]);
        }
        for &a in &active {
            for (b, d) in metric.neighbors(a) {
                if b > a && is_active[b] {
                    for s in 0..nt {
                        consider(a, s, b, s, d);
                    }
                }
            }
            for s in 1..nt {
                consider(a, s - 1, a, s, 0.0);
            }
        }
    }
    let arg_pair = arg.map(|(a, s, b, r)| {
        (ParabolicPoint { x: lat.point(a), t: u.times[s] }, ParabolicPoint { x: lat.point(b), t: u.times[r] })
    });
    Ok(HolderReport { alpha, sup_norm, seminorm: best, total: sup_norm + best, arg_pair, pairs })
}

/// X_I u for every index word I of length `order` over the p ε-fields, by
/// centered differences; nodes without margin carry NaN.
pub fn frame_derivatives(ef: &EpsFrame, lat: &Lattice, u: &[f64], order: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut level = vec![(Vec::new(), u.to_vec())];
    for _ in 0..order {
        let mut next = Vec::new();
        for (word, g) in &level {
            let grads = crate::par::map_range(lat.len(), |i| horizontal_gradient(ef, lat, g, i).ok());
            for k in 0..ef.p() {
                let vals = grads.iter().map(|o| o.as_ref().map_or(f64::NAN, |v| v[k])).collect();
                let mut w = word.clone();
                w.insert(0, k);
                next.push((w, vals));
            }
        }
        level = next;
    }
    level
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolevReport {
    pub total: f64,
    /// ‖X_I u‖_{L^p} per index word I.
    pub terms: Vec<(Vec<usize>, f64)>,
    pub nodes: usize,
}

/// Σ_{|I| ≤ k} ‖X_I u‖_{L^p} as lattice sums over the nodes at depth ≥ k.
pub fn sobolev_norm(u: &[f64], k: usize, p: f64, ef: &EpsFrame, lat: &Lattice) -> Result<SobolevReport> {
    if k > 2 {
        return Err(LabError::InvalidParameter("orders above 2 are not supported".into()));
    }
    if !(p >= 1.0) {
        return Err(LabError::InvalidParameter("p must be ≥ 1".into()));
    }
    let nodes: Vec<usize> = (0..lat.len()).filter(|&i| lat.boundary_depth(i) >= k).collect();
    if nodes.is_empty() {
        return Err(LabError::OutOfDomain(format!("no node has the margin for {k}-fold differences")));
    }
    let cv = lat.cell_volume();
    let mut terms = Vec::new();
    for order in 0..=k {
        for (word, g) in frame_derivatives(ef, lat, u, order) {
            let v = if p.is_infinite() {
                nodes.iter().map(|&i| g[i].abs()).fold(0.0, f64::max)
            } else {
                (nodes.iter().map(|&i| g[i].abs().powf(p)).sum::<f64>() * cv).powf(1.0 / p)
            };
            terms.push((word, v));
        }
    }
    Ok(SobolevReport { total: terms.iter().map(|t| t.1).sum(), terms, nodes: nodes.len() })
}

#[derive(Debug, Clone, Serialize)]
pub struct SchauderReport {
    pub eps: f64,
    pub alpha: f64,
    pub c2a_norm: f64,
    pub ca_f_norm: f64,
    pub c1a_norm: f64,
    pub ratio: f64,
}

/// Boolean mask of the nodes inside [lo, hi].
pub fn box_mask(lat: &Lattice, lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..lat.len())
        .map(|i| lat.point(i).iter().enumerate().all(|(k, v)| *v >= lo[k] - 1e-12 && *v <= hi[k] + 1e-12))
        .collect()
}

/// Inputs of a manufactured-solution Schauder probe.
pub struct SchauderProblem<'a> {
    pub w: &'a (dyn Fn(&[f64], f64) -> f64 + Sync),
    pub a: &'a (dyn Fn(&[f64]) -> DMatrix<f64> + Sync),
    pub times: Vec<f64>,
    pub alpha: f64,
    pub k: (Vec<f64>, Vec<f64>),
    pub k_delta: (Vec<f64>, Vec<f64>),
    pub pairs: usize,
    pub seed: u64,
}

/// ‖w‖_{C^{2,α}(K)} / (‖f‖_{C^α(K_δ)} + ‖w‖_{C^{1,α}(K_δ)}) with
/// f = ∂_t w − Σ a_ij X_i X_j w computed by the same differences, so w solves
/// the discrete equation exactly. The numerator sums the Hölder norms of the
/// second differences X_i X_j w; the C^{1,α} norm sums orders 0 and 1.
pub fn schauder_ratio(ef: &EpsFrame, metric: &SpaceMetric, prob: &SchauderProblem) -> Result<SchauderReport> {
    let lat = metric.lat();
    let times = &prob.times;
    if times.len() < 2 {
        return Err(LabError::InvalidParameter("need at least two times".into()));
    }
    let p = ef.p();
    let wv: Vec<Vec<f64>> = times.iter().map(|&t| lat.sample(|x| (prob.w)(x, t))).collect();
    let nt = times.len();
    let amats: Vec<DMatrix<f64>> = (0..lat.len()).map(|i| (prob.a)(&lat.point(i))).collect();
    if amats.iter().any(|m| m.nrows() != p || m.ncols() != p) {
        return Err(LabError::InvalidParameter(format!("coefficient field must be {p}×{p}")));
    }
    let mut second: Vec<Vec<(Vec<usize>, Vec<f64>)>> = Vec::new();
    let mut first: Vec<Vec<(Vec<usize>, Vec<f64>)>> = Vec::new();
    let mut f_vals = Vec::new();
    for s in 0..nt {
        let d2 = frame_derivatives(ef, lat, &wv[s], 2);
        let (a, b) = if s == 0 { (0, 1) } else if s == nt - 1 { (nt - 2, nt - 1) } else { (s - 1, s + 1) };
        let dt = times[b] - times[a];
        let f: Vec<f64> = (0..lat.len())
            .map(|n| {
                let mut acc = (wv[b][n] - wv[a][n]) / dt;
                for (word, g) in &d2 {
                    acc -= amats[n][(word[0], word[1])] * g[n];
                }
                acc
            })
            .collect();
        f_vals.push(f);
        first.push(frame_derivatives(ef, lat, &wv[s], 1));
        second.push(d2);
    }
    let kmask = box_mask(lat, &prob.k.0, &prob.k.1);
    let dmask = box_mask(lat, &prob.k_delta.0, &prob.k_delta.1);
    if kmask.iter().zip(&dmask).any(|(k, d)| *k && !*d) {
        return Err(LabError::InvalidParameter("K must lie inside K_δ".into()));
    }
    let field = |vals: Vec<Vec<f64>>| SpaceTimeField { lat: lat.clone(), times: times.clone(), values: vals };
    let hn = |vals: Vec<Vec<f64>>, mask: &[bool]| holder_norm(&field(vals), prob.alpha, metric, prob.pairs, prob.seed, Some(mask)).map(|r| r.total);
    let mut c2a = 0.0;
    for w in 0..p * p {
        c2a += hn(second.iter().map(|d| d[w].1.clone()).collect(), &kmask)?;
    }
    let ca_f = hn(f_vals, &dmask)?;
    let mut c1a = hn(wv.clone(), &dmask)?;
    for w in 0..p {
        c1a += hn(first.iter().map(|d| d[w].1.clone()).collect(), &dmask)?;
    }
    let den = ca_f + c1a;
    if den < 1e-14 {
        return Err(LabError::DegenerateDenominator(den));
    }
    Ok(SchauderReport { eps: ef.eps, alpha: prob.alpha, c2a_norm: c2a, ca_f_norm: ca_f, c1a_norm: c1a, ratio: c2a / den })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabolic_distance_examples() {
        let lat = Lattice::centered(&[0.0; 2], &[4, 4], &[0.25, 0.25], &[false; 2]).unwrap();
        let m = SpaceMetric::Euclidean(lat);
        let p = ParabolicPoint { x: vec![0.1, 0.2], t: 0.3 };
        assert_eq!(parabolic_dist(&m, &p, &p).unwrap(), 0.0);
        let q = ParabolicPoint { x: vec![0.1, 0.2], t: 0.34 };
        assert!((parabolic_dist(&m, &p, &q).unwrap() - 0.2).abs() < 1e-12);
        let r = ParabolicPoint { x: vec![0.4, 0.6], t: 0.3 };
        assert!((parabolic_dist(&m, &p, &r).unwrap() - 0.5).abs() < 1e-12);
    }
}
