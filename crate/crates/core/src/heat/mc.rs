//! Stratonovich stochastic flow along √2·X_i^ε, Heun steps; its generator is
//! Σ (X_i^ε)².

use rand_distr::{Distribution, StandardNormal};

use super::{KernelField, KernelMethod};
use crate::error::{LabError, Result};
use crate::frames::EpsFrame;
use crate::lattice::Lattice;

#[derive(Debug, Clone)]
pub struct McOptions {
    pub paths: usize,
    pub seed: u64,
    pub steps: usize,
    pub snapshots: Vec<f64>,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { paths: 100_000, seed: 1, steps: 256, snapshots: Vec::new() }
    }
}

const BATCH: usize = 4096;

/// Density of the stochastic flow started at y, binned to nearest nodes.
pub fn heat_mc(ef: &EpsFrame, lat: &Lattice, y: &[f64], t_end: f64, opts: &McOptions) -> Result<KernelField> {
    if opts.paths < 100_000 {
        return Err(LabError::InvalidParameter("at least 10⁵ paths required".into()));
    }
    if !(t_end > 0.0) || opts.steps == 0 {
        return Err(LabError::InvalidParameter("t_end and steps must be positive".into()));
    }
    if lat.dim() != ef.dim() {
        return Err(LabError::InvalidParameter("lattice and frame dimensions differ".into()));
    }
    lat.check_contains(y)?;
    let n = ef.dim();
    let fields: Vec<usize> = (0..ef.p()).filter(|&i| !ef.is_null(i)).collect();
    let dt = t_end / opts.steps as f64;
    let mut record: Vec<usize> = opts
        .snapshots
        .iter()
        .filter(|&&t| t > 0.0 && t < t_end)
        .map(|&t| ((t / dt).round() as usize).clamp(1, opts.steps))
        .collect();
    record.push(opts.steps);
    record.sort_unstable();
    record.dedup();
    let nb = opts.paths.div_ceil(BATCH);
    let periodic = ef.base.periodic.clone();
    let batches = crate::par::map_range(nb, |b| {
        let mut rng = crate::rng::stream(opts.seed, b as u64);
        let todo = BATCH.min(opts.paths - b * BATCH);
        let mut ends = vec![Vec::with_capacity(todo * n); record.len()];
        let sq = (2.0 * dt).sqrt();
        let mut x = vec![0.0; n];
        let mut xp = vec![0.0; n];
        let mut dw = vec![0.0; fields.len()];
        let mut v0 = vec![vec![0.0; n]; fields.len()];
        let mut v1 = vec![0.0; n];
        for _ in 0..todo {
            x.copy_from_slice(y);
            let mut r = 0;
            for s in 1..=opts.steps {
                for w in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = sq * z;
                }
                xp.copy_from_slice(&x);
                for (j, &i) in fields.iter().enumerate() {
                    ef.eval(i, &x, &mut v0[j]);
                    for k in 0..n {
                        xp[k] += v0[j][k] * dw[j];
                    }
                }
                for (j, &i) in fields.iter().enumerate() {
                    ef.eval(i, &xp, &mut v1);
                    for k in 0..n {
                        x[k] += 0.5 * (v0[j][k] + v1[k]) * dw[j];
                    }
                }
                if r < record.len() && record[r] == s {
                    ends[r].extend_from_slice(&x);
                    r += 1;
                }
            }
        }
        ends
    });
    let cv = lat.cell_volume();
    let scale = 1.0 / (opts.paths as f64 * cv);
    let mut values = vec![vec![0.0; lat.len()]; record.len()];
    let mut p = vec![0.0; n];
    for batch in &batches {
        for (r, ends) in batch.iter().enumerate() {
            for chunk in ends.chunks_exact(n) {
                p.copy_from_slice(chunk);
                for a in 0..n {
                    if periodic[a] {
                        p[a] = p[a].rem_euclid(crate::lattice::TWO_PI);
                    }
                }
                if let Some(i) = lat.nearest(&p) {
                    values[r][i] += scale;
                }
            }
        }
    }
    let mass = values.iter().map(|v| v.iter().sum::<f64>() * cv).collect();
    Ok(KernelField {
        lat: lat.clone(),
        source: y.to_vec(),
        times: record.iter().map(|&s| s as f64 * dt).collect(),
        values,
        mass,
        method: KernelMethod::MonteCarlo,
        dt,
    })
}
