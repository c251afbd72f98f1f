//! Lattice graph whose edge costs are control sizes of admissible moves.
//!
//! Every node gets three kinds of edges:
//! * straight moves to the nodes of a small cube of offsets, priced by the
//!   least-norm control through the degree-one ε-fields at the node;
//! * the same moves with the part outside the span of those fields produced
//!   by a commutator loop, priced 2^d·|b|^{1/d} for a degree-d bracket with
//!   coefficient b (a square loop of side s moves s² along [X_i, X_j] at
//!   cost 4s);
//! * flows of short constant controls, snapped to the nearest node, with the
//!   snapping residual priced as a straight move.
//! The landing point of every straight move is checked by integrating the
//! control; any mismatch is priced and added, so edge costs stay upper bounds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use super::{DistanceMethod, DistanceResult};
use crate::error::{LabError, Result};
use crate::frames::{flow_in_place, EpsFrame};
use crate::lattice::{Lattice, TWO_PI};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphOptions {
    /// Half-width of the cube of straight-move offsets, in nodes.
    pub radius: usize,
    /// Control size unit for flow moves; `None` uses twice the largest
    /// non-periodic spacing.
    pub control_step: Option<f64>,
    /// Flow moves use multiples −L..=L of the control step.
    pub control_levels: i32,
    /// Allow commutator-loop moves.
    pub bracket_moves: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { radius: 2, control_step: None, control_levels: 2, bracket_moves: true }
    }
}

const MAXN: usize = 8;
const MAXP: usize = 16;

/// Local linear algebra at one point: pseudo-inverse of the degree-one field
/// matrix and the bracket directions outside its span.
struct Local {
    n: usize,
    p: usize,
    pinv: [[f64; MAXN]; MAXP],
    proj: [[f64; MAXN]; MAXN],
    brackets: Vec<BracketDir>,
}

struct BracketDir {
    dir: [f64; MAXN],
    dir_norm: f64,
    resid: [f64; MAXN],
    resid2: f64,
    pinv_dir: [f64; MAXP],
    pinv_dir2: f64,
    coef: f64,
    inv_deg: f64,
}

impl BracketDir {
    #[inline]
    fn loop_cost(&self, coef: f64) -> f64 {
        let a = coef.abs();
        let root = if self.inv_deg == 0.5 {
            a.sqrt()
        } else if self.inv_deg == 1.0 / 3.0 {
            a.cbrt()
        } else {
            a.powf(self.inv_deg)
        };
        self.coef * root
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Local {
    fn new(ef: &EpsFrame, x: &[f64], use_brackets: bool) -> Self {
        let n = ef.dim();
        let p = ef.p();
        assert!(n <= MAXN && p <= MAXP, "frame too large for the lattice graph");
        let mut f = DMatrix::zeros(n, p);
        let mut col = [0.0; MAXN];
        for i in 0..p {
            ef.eval(i, x, &mut col[..n]);
            for k in 0..n {
                f[(k, i)] = col[k];
            }
        }
        let svd = f.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let pinv_m = svd.pseudo_inverse(1e-9 * smax.max(1e-300)).unwrap_or_else(|_| DMatrix::zeros(p, n));
        let proj_m = DMatrix::<f64>::identity(n, n) - &f * &pinv_m;
        let mut pinv = [[0.0; MAXN]; MAXP];
        for i in 0..p {
            for k in 0..n {
                pinv[i][k] = pinv_m[(i, k)];
            }
        }
        let mut proj = [[0.0; MAXN]; MAXN];
        for a in 0..n {
            for b in 0..n {
                proj[a][b] = proj_m[(a, b)];
            }
        }
        let mut local = Local { n, p, pinv, proj, brackets: Vec::new() };
        if use_brackets {
            let frame = &ef.base;
            for k in frame.m..frame.p() {
                let d = frame.degrees[k];
                let mut dir = [0.0; MAXN];
                frame.eval(k, x, &mut dir[..n]);
                let dir_norm = dot(&dir[..n], &dir[..n]).sqrt();
                if dir_norm < 1e-12 {
                    continue;
                }
                let mut resid = [0.0; MAXN];
                local.apply_proj(&dir[..n], &mut resid);
                let mut pinv_dir = [0.0; MAXP];
                local.apply_pinv(&dir[..n], &mut pinv_dir);
                local.brackets.push(BracketDir {
                    dir,
                    dir_norm,
                    resid2: dot(&resid[..n], &resid[..n]),
                    resid,
                    pinv_dir2: dot(&pinv_dir[..p], &pinv_dir[..p]),
                    pinv_dir,
                    coef: (1u64 << d) as f64,
                    inv_deg: 1.0 / d as f64,
                });
            }
        }
        local
    }

    #[inline]
    fn apply_pinv(&self, v: &[f64], out: &mut [f64; MAXP]) {
        for i in 0..self.p {
            out[i] = dot(&self.pinv[i][..self.n], v);
        }
    }

    #[inline]
    fn apply_proj(&self, v: &[f64], out: &mut [f64; MAXN]) {
        for a in 0..self.n {
            out[a] = dot(&self.proj[a][..self.n], v);
        }
    }

    /// Cheapest way to realize displacement `delta`: returns the cost, writes
    /// the control into `control` and reports the bracket used, if any.
    fn price(&self, delta: &[f64], control: &mut [f64]) -> Option<(f64, Option<(usize, f64)>)> {
        let (n, p) = (self.n, self.p);
        let norm = dot(delta, delta).sqrt();
        if norm == 0.0 {
            control.iter_mut().for_each(|v| *v = 0.0);
            return Some((0.0, None));
        }
        let tol = 1e-9 * norm;
        let mut r0 = [0.0; MAXN];
        self.apply_proj(delta, &mut r0);
        let rn = dot(&r0[..n], &r0[..n]).sqrt();
        let mut pd = [0.0; MAXP];
        self.apply_pinv(delta, &mut pd);
        let mut best_cost = f64::INFINITY;
        let mut best_br: Option<(usize, f64)> = None;
        if rn <= tol {
            best_cost = dot(&pd[..p], &pd[..p]).sqrt();
        }
        for (bi, b) in self.brackets.iter().enumerate() {
            if b.resid2.sqrt() > 1e-9 * b.dir_norm {
                let coef = dot(&b.resid[..n], &r0[..n]) / b.resid2;
                let mut miss2 = 0.0;
                for k in 0..n {
                    miss2 += (r0[k] - coef * b.resid[k]).powi(2);
                }
                if miss2.sqrt() <= tol {
                    let mut c2 = 0.0;
                    for i in 0..p {
                        c2 += (pd[i] - coef * b.pinv_dir[i]).powi(2);
                    }
                    let cost = c2.sqrt() + b.loop_cost(coef);
                    if cost < best_cost {
                        best_cost = cost;
                        best_br = Some((bi, coef));
                    }
                }
            } else if rn <= tol && b.pinv_dir2 > 0.0 {
                // bracket direction already reachable: a partial loop can still be cheaper
                let bstar = dot(&pd[..p], &b.pinv_dir[..p]) / b.pinv_dir2;
                for t in 1..=8 {
                    let coef = bstar * t as f64 / 8.0;
                    let mut c2 = 0.0;
                    for i in 0..p {
                        c2 += (pd[i] - coef * b.pinv_dir[i]).powi(2);
                    }
                    let cost = c2.sqrt() + b.loop_cost(coef);
                    if cost < best_cost {
                        best_cost = cost;
                        best_br = Some((bi, coef));
                    }
                }
            }
        }
        if !best_cost.is_finite() {
            return None;
        }
        for i in 0..p {
            control[i] = pd[i] - best_br.map(|(bi, c)| c * self.brackets[bi].pinv_dir[i]).unwrap_or(0.0);
        }
        Some((best_cost, best_br))
    }
}

fn wrapped_diff(lat: &Lattice, a: &[f64], b: &[f64], out: &mut [f64]) {
    for k in 0..a.len() {
        let mut d = a[k] - b[k];
        if lat.periodic[k] {
            d -= TWO_PI * (d / TWO_PI).round();
        }
        out[k] = d;
    }
}

pub struct DistanceGraph {
    pub lat: Lattice,
    pub ef: EpsFrame,
    pub opts: GraphOptions,
    start: Vec<u32>,
    targets: Vec<u32>,
    costs: Vec<f32>,
    max_edge: f64,
}

impl std::fmt::Debug for DistanceGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistanceGraph").field("nodes", &self.lat.len()).field("edges", &self.targets.len()).finish()
    }
}

impl DistanceGraph {
    pub fn build(ef: &EpsFrame, lat: &Lattice, opts: &GraphOptions) -> Result<Self> {
        if ef.dim() != lat.dim() {
            return Err(LabError::InvalidParameter("frame and lattice dimensions differ".into()));
        }
        if lat.len() >= u32::MAX as usize {
            return Err(LabError::InvalidParameter("lattice too large".into()));
        }
        let n = lat.dim();
        let r = opts.radius as i64;
        let mut offsets: Vec<Vec<i64>> = vec![vec![]];
        for _ in 0..n {
            offsets = offsets
                .into_iter()
                .flat_map(|o| {
                    (-r..=r).map(move |v| {
                        let mut o = o.clone();
                        o.push(v);
                        o
                    })
                })
                .collect();
        }
        offsets.retain(|o| o.iter().any(|&v| v != 0));

        let sigma = opts.control_step.unwrap_or_else(|| {
            2.0 * (0..n).filter(|&k| !lat.periodic[k]).map(|k| lat.spacing[k]).fold(0.0, f64::max)
        });
        let active: Vec<usize> = (0..ef.p()).filter(|&i| !ef.is_null(i)).collect();
        let levels: Vec<f64> =
            (-opts.control_levels..=opts.control_levels).filter(|&l| l != 0).map(|l| l as f64 * sigma).collect();
        let mut controls: Vec<Vec<f64>> = Vec::new();
        for (ai, &i) in active.iter().enumerate() {
            for &a in &levels {
                let mut c = vec![0.0; ef.p()];
                c[i] = a;
                controls.push(c.clone());
                for &j in &active[ai + 1..] {
                    for &b in &levels {
                        let mut c2 = c.clone();
                        c2[j] = b;
                        controls.push(c2);
                    }
                }
            }
        }

        let per_node: Vec<Vec<(u32, f32)>> = crate::par::map_chunks(lat.len(), 256, |range| {
            let mut out = Vec::with_capacity(range.len());
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            let mut node = vec![0.0; n];
            let mut delta = vec![0.0; n];
            let mut control = vec![0.0; ef.p()];
            for idx in range {
                lat.coord(idx, &mut x);
                let local = Local::new(ef, &x, opts.bracket_moves);
                let mut edges: Vec<(u32, f32)> = Vec::with_capacity(offsets.len() + controls.len());
                for off in &offsets {
                    let Some(t) = lat.offset(idx, off) else { continue };
                    for k in 0..n {
                        delta[k] = off[k] as f64 * lat.spacing[k];
                    }
                    let Some((mut cost, br)) = local.price(&delta, &mut control) else { continue };
                    y.copy_from_slice(&x);
                    flow_in_place(ef, &control, &mut y, 1, 1.0);
                    if let Some((bi, coef)) = br {
                        for k in 0..n {
                            y[k] += coef * local.brackets[bi].dir[k];
                        }
                    }
                    for k in 0..n {
                        node[k] = x[k] + delta[k];
                    }
                    wrapped_diff(lat, &node, &y, &mut delta);
                    let miss = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if miss > 1e-12 * (1.0 + cost) {
                        match local.price(&delta, &mut control) {
                            Some((extra, _)) => cost += extra,
                            None => continue,
                        }
                    }
                    edges.push((t as u32, cost as f32));
                }
                for c in &controls {
                    y.copy_from_slice(&x);
                    flow_in_place(ef, c, &mut y, 2, 1.0);
                    let Some(t) = lat.nearest(&y) else { continue };
                    if t == idx {
                        continue;
                    }
                    lat.coord(t, &mut node);
                    wrapped_diff(lat, &node, &y, &mut delta);
                    let Some((extra, _)) = local.price(&delta, &mut control) else { continue };
                    let cost = c.iter().map(|v| v * v).sum::<f64>().sqrt() + extra;
                    edges.push((t as u32, cost as f32));
                }
                edges.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
                edges.dedup_by_key(|e| e.0);
                out.push(edges);
            }
            out
        });

        let total: usize = per_node.iter().map(|e| e.len()).sum();
        let mut start = Vec::with_capacity(lat.len() + 1);
        let mut targets = Vec::with_capacity(total);
        let mut costs = Vec::with_capacity(total);
        let mut max_edge = 0.0f64;
        start.push(0u32);
        for edges in per_node {
            for (t, c) in edges {
                targets.push(t);
                costs.push(c);
                max_edge = max_edge.max(c as f64);
            }
            start.push(targets.len() as u32);
        }
        Ok(DistanceGraph { lat: lat.clone(), ef: ef.clone(), opts: opts.clone(), start, targets, costs, max_edge })
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn max_edge_cost(&self) -> f64 {
        self.max_edge
    }

    pub fn edges(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.start[node] as usize, self.start[node + 1] as usize);
        self.targets[a..b].iter().zip(&self.costs[a..b]).map(|(&t, &c)| (t as usize, c as f64))
    }

    /// Single-source shortest paths from `source`.
    pub fn from_node(&self, source: usize) -> DistanceField {
        self.dijkstra(source, None, false)
    }

    /// Shortest paths with predecessor links, stopping once `target` settles.
    pub fn path_search(&self, source: usize, target: usize) -> DistanceField {
        self.dijkstra(source, Some(target), true)
    }

    fn dijkstra(&self, source: usize, stop: Option<usize>, keep_pred: bool) -> DistanceField {
        let nn = self.lat.len();
        let mut dist = vec![f64::INFINITY; nn];
        let mut pred = if keep_pred { vec![u32::MAX; nn] } else { Vec::new() };
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Item(0.0, source as u32));
        while let Some(Item(d, u)) = heap.pop() {
            let u = u as usize;
            if d > dist[u] {
                continue;
            }
            if stop == Some(u) {
                break;
            }
            let (a, b) = (self.start[u] as usize, self.start[u + 1] as usize);
            for e in a..b {
                let v = self.targets[e] as usize;
                let nd = d + self.costs[e] as f64;
                if nd < dist[v] {
                    dist[v] = nd;
                    if keep_pred {
                        pred[v] = u as u32;
                    }
                    heap.push(Item(nd, v as u32));
                }
            }
        }
        DistanceField { source, values: dist, pred }
    }

    /// Cost of the move from `x` to the nearby point `x + delta`, priced at `x`.
    pub fn local_cost(&self, x: &[f64], delta: &[f64]) -> f64 {
        let local = Local::new(&self.ef, x, self.opts.bracket_moves);
        let mut control = vec![0.0; self.ef.p()];
        local.price(delta, &mut control).map(|(c, _)| c).unwrap_or(f64::INFINITY)
    }

    /// Nearest node to `x` and the cost of reaching it (or leaving it when
    /// `toward` is false).
    pub fn snap(&self, x: &[f64], toward: bool) -> Result<(usize, f64)> {
        let node = self.lat.nearest(x).ok_or_else(|| LabError::OutOfDomain(format!("{x:?} outside lattice")))?;
        let p = self.lat.point(node);
        let mut d = vec![0.0; x.len()];
        if toward {
            wrapped_diff(&self.lat, &p, x, &mut d);
            Ok((node, self.local_cost(x, &d)))
        } else {
            wrapped_diff(&self.lat, x, &p, &mut d);
            Ok((node, self.local_cost(&p, &d)))
        }
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<DistanceResult> {
        self.lat.check_contains(x)?;
        self.lat.check_contains(y)?;
        if x == y {
            return Ok(DistanceResult {
                value: 0.0,
                method: DistanceMethod::LatticeDijkstra,
                upper_bound_flag: true,
                witness_path: Some(vec![x.to_vec()]),
            });
        }
        let (nx, cx) = self.snap(x, true)?;
        let (ny, cy) = self.snap(y, false)?;
        let field = self.path_search(nx, ny);
        let core = field.values[ny];
        if !core.is_finite() || !cx.is_finite() || !cy.is_finite() {
            return Err(LabError::ResolutionTooCoarse(format!("{y:?} not reachable from {x:?} on this lattice")));
        }
        let mut nodes = vec![ny];
        let mut cur = ny;
        while cur != nx {
            cur = field.pred[cur] as usize;
            nodes.push(cur);
        }
        nodes.reverse();
        let mut path = vec![x.to_vec()];
        path.extend(nodes.iter().map(|&i| self.lat.point(i)));
        path.push(y.to_vec());
        Ok(DistanceResult {
            value: cx + core + cy,
            method: DistanceMethod::LatticeDijkstra,
            upper_bound_flag: true,
            witness_path: Some(path),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: usize,
    pub values: Vec<f64>,
    pred: Vec<u32>,
}

impl DistanceField {
    pub fn from_values(source: usize, values: Vec<f64>) -> Self {
        DistanceField { source, values, pred: Vec::new() }
    }

    /// Interpolated distance at an arbitrary point.
    pub fn at(&self, lat: &Lattice, x: &[f64]) -> f64 {
        lat.interpolate(&self.values, x).unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, u32);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
