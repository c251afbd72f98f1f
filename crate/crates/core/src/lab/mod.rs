//! Experiment runner: configuration, dispatch, CSV and JSON output.

pub mod acceptance;
pub mod cache;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

pub use cache::BallCache;
pub use config::{Experiment, ExperimentConfig};
pub use manifest::{emit_plot_data, Check, PlotRow, ResultManifest, RunOutput, Scalar};

use crate::error::{LabError, Result};
use crate::expr;
use crate::flows::{eps_convergence_study, run_flow, BoundaryFn, FlowKind, FlowSolver, FlowState};
use crate::frames::{load_frame, make_eps_frame, EpsFrame, Frame};
use crate::geodesy::{dist_control, gauge_dist_heis, ControlOptions, DistanceGraph, GraphOptions};
use crate::heat::{
    discrete_delta, gaussian_fit, h1_heat_lattice, harnack_ratio, heat_fd, heat_mc, identity, lift_h1_kernel, marginalize, CoeffMatrix,
    Cylinders, FdOptions, KernelField, McOptions,
};
use crate::lattice::Lattice;
use crate::measure::{ball_half_widths, ball_lattice, default_test_functions, doubling_pair, nsw_volume, BallResolution};
use crate::norms::{schauder_ratio, SchauderProblem, SpaceMetric};
use crate::rng::derive;
use config::{AMatrix, LatticeSpec};
use manifest::{num, point, Csv};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    cache::hex(&Sha256::digest(cfg.to_toml().as_bytes()))
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    frame: Arc<Frame>,
    out: PathBuf,
    cache: Option<BallCache>,
    manifest: ResultManifest,
}

/// Runs the configured experiment, writes its CSV files and manifest.json
/// under the output directory. On failure the manifest is still written
/// (complete = false) with whatever finished.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultManifest> {
    run_with_progress(cfg, &mut |_| {})
}

/// As `run`; `progress` receives one line per finished unit of work.
pub fn run_with_progress(cfg: &ExperimentConfig, progress: &mut (dyn FnMut(&str) + Send)) -> Result<ResultManifest> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.output).map_err(|e| LabError::from(e).context(cfg.output.display().to_string()))?;
    let frame = Arc::new(load_frame(&cfg.frame).map_err(|e| e.context("frame"))?);
    let cache = if cfg.cache { Some(BallCache::on_disk(cfg.output.join("cache"))?) } else { None };
    let manifest = ResultManifest {
        experiment: cfg.experiment.name().into(),
        frame: frame.name.clone(),
        config_hash: config_hash(cfg),
        tool_version: TOOL_VERSION.into(),
        seed: cfg.seed,
        threads: cfg.threads,
        ..Default::default()
    };
    let mut r = Runner { cfg, frame, out: cfg.output.clone(), cache, manifest };
    let res = crate::par::with_threads(cfg.threads, || r.dispatch(progress));
    r.manifest.wall_time_s = start.elapsed().as_secs_f64();
    r.manifest.complete = res.is_ok();
    if let Err(e) = &res {
        r.manifest.error = Some(e.to_string());
    }
    r.manifest.write(&r.out.join("manifest.json"))?;
    res.map_err(|e| e.context(cfg.experiment.name()))?;
    Ok(r.manifest)
}

fn parse_expr(src: &str, n: usize, with_t: bool) -> Result<expr::Expr> {
    let mut names = expr::coordinate_names(n);
    if with_t {
        names.push("t".into());
    }
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    expr::parse(src, &refs, 1)
}

fn lattice_from_spec(spec: &LatticeSpec) -> Result<Lattice> {
    let n = spec.lower.len();
    let h: Vec<f64> = if spec.h.len() == 1 { vec![spec.h[0]; n] } else { spec.h.clone() };
    let periodic = if spec.periodic.is_empty() { vec![false; n] } else { spec.periodic.clone() };
    let counts: Vec<usize> = (0..n).map(|k| (((spec.upper[k] - spec.lower[k]) / h[k]).round() as usize + 1).max(2)).collect();
    let counts: Vec<usize> = counts.iter().zip(&periodic).map(|(c, p)| if *p { c - 1 } else { *c }).collect();
    Lattice::new(&spec.lower, &spec.upper, &counts, &periodic)
}

/// Default ball center: the origin, or θ = π for the rototranslation group.
fn default_center(frame: &Frame) -> Vec<f64> {
    let mut c = vec![0.0; frame.dim()];
    if frame.name == "rototranslation" {
        c[2] = std::f64::consts::PI;
    }
    c
}

impl Runner<'_> {
    fn dispatch(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        match self.cfg.experiment {
            Experiment::Dist => self.dist(progress),
            Experiment::Volume | Experiment::Doubling | Experiment::Poincare => self.measure(progress),
            Experiment::Heat => self.heat(progress),
            Experiment::Gaussfit => self.gaussfit(progress),
            Experiment::LiftCheck => self.lift(progress),
            Experiment::Harnack => self.harnack(progress),
            Experiment::Flow => self.flow(progress),
            Experiment::Schauder => self.schauder(progress),
            Experiment::Acceptance => self.acceptance(progress),
        }
    }

    fn eps_frame(&self, eps: f64) -> Result<EpsFrame> {
        make_eps_frame(self.frame.clone(), eps)
    }

    fn eps_list(&self) -> Result<Vec<f64>> {
        if self.cfg.eps_list.is_empty() {
            return Err(LabError::InvalidParameter("eps_list is empty".into()));
        }
        Ok(self.cfg.eps_list.clone())
    }

    fn plot(&mut self, eps: f64, var: &str, at: f64, quantity: &str, value: f64) {
        self.manifest.plot.push(PlotRow {
            experiment: self.manifest.experiment.clone(),
            frame: self.frame.name.clone(),
            eps,
            var: var.into(),
            at,
            quantity: quantity.into(),
            value,
        });
    }

    fn require_smooth(&self) -> Result<()> {
        if !self.frame.smooth {
            return Err(LabError::UnsupportedFrame(format!("{} has non-smooth coefficients", self.frame.name)));
        }
        Ok(())
    }

    fn dist(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        let p = &self.cfg.dist;
        let n = self.frame.dim();
        if p.from.len() != n || p.to.len() != n {
            return Err(LabError::InvalidParameter(format!("points need {n} coordinates")));
        }
        let (use_lat, use_ctl) = match p.method.as_str() {
            "lattice" => (true, false),
            "control" => (false, true),
            "both" => (true, true),
            m => return Err(LabError::InvalidParameter(format!("unknown method {m}"))),
        };
        let mut run = RunOutput::new("dist");
        let mut csv = Csv::create(self.out.join("dist.csv"), &["eps", "x", "y", "value_lattice", "value_control", "gauge_value"])?;
        for eps in self.eps_list()? {
            let ef = self.eps_frame(eps)?;
            let ctl = if use_ctl {
                let opts = ControlOptions { seed: derive(self.cfg.seed, "dist"), ..Default::default() };
                Some(dist_control(&ef, &p.from, &p.to, &opts)?.value)
            } else {
                None
            };
            let lat_v = if use_lat {
                let lat = match &self.cfg.lattice {
                    Some(s) => lattice_from_spec(s)?,
                    None => {
                        let span = p.from.iter().zip(&p.to).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        let r = ctl.unwrap_or(2.0 * span.max(span.sqrt())) * 1.2;
                        let res = BallResolution { half_nodes: 20, max_half_nodes: 140, commensurate: true };
                        ball_lattice(&ef, &p.from, r, &res, &vec![1.0; n])?
                    }
                };
                let g = DistanceGraph::build(&ef, &lat, &GraphOptions::default())?;
                Some(g.distance(&p.from, &p.to)?.value)
            } else {
                None
            };
            let gauge = (self.frame.name == "heisenberg1").then(|| gauge_dist_heis(&p.from, &p.to, eps));
            let opt = |v: Option<f64>| v.map_or(String::new(), num);
            csv.row(&[num(eps), point(&p.from), point(&p.to), opt(lat_v), opt(ctl), opt(gauge)])?;
            for (name, v) in [("value_lattice", lat_v), ("value_control", ctl), ("gauge_value", gauge)] {
                if let Some(v) = v {
                    run.scalar(format!("{name}_eps{eps}"), v);
                    self.plot(eps, "eps", eps, name, v);
                }
            }
            progress(&format!("dist eps {eps}: lattice {} control {}", opt(lat_v), opt(ctl)));
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        Ok(())
    }

    fn measure(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        let p = self.cfg.volume.clone();
        let center = p.center.clone().unwrap_or_else(|| default_center(&self.frame));
        let res = BallResolution { half_nodes: p.half_nodes, ..Default::default() };
        let exp = self.cfg.experiment;
        let name = exp.name();
        let mut run = RunOutput::new(name);
        let mut csv = Csv::create(self.out.join(format!("{name}.csv")), &["frame", "eps", "r", "estimate", "stderr", "method"])?;
        let fname = self.frame.name.clone();
        for eps in self.eps_list()? {
            let ef = self.eps_frame(eps)?;
            for &r in &p.r_list {
                let seed = derive(self.cfg.seed, &format!("{name}-{eps}-{r}"));
                let cache = self.cache.as_ref();
                let mut nsw = None;
                let (est, se, method) = match exp {
                    Experiment::Volume => {
                        let v = cache::adapted(cache, &ef, &center, r, &res)?.volume_mc(r, p.samples, seed)?;
                        nsw = Some(nsw_volume(&ef, &center, r)?);
                        (v.volume, v.stderr, "montecarlo")
                    }
                    Experiment::Doubling => {
                        let small = cache::adapted(cache, &ef, &center, r, &res)?;
                        let large = cache::adapted(cache, &ef, &center, 2.0 * r, &res)?;
                        let d = doubling_pair(&small, &large, r, p.samples, seed)?;
                        (d.ratio, d.stderr, "doubling")
                    }
                    _ => {
                        let probe = cache::adapted(cache, &ef, &center, 2.0 * r, &res)?;
                        let tests = default_test_functions(&center, &ball_half_widths(&ef, &center, r), seed);
                        (probe.poincare(&ef, r, &tests)?.max_ratio, f64::NAN, "poincare")
                    }
                };
                csv.row(&[fname.clone(), num(eps), num(r), num(est), num(se), method.into()])?;
                if let Some(v) = nsw {
                    csv.row(&[fname.clone(), num(eps), num(r), num(v), num(0.0), "nsw".into()])?;
                    self.plot(eps, "r", r, "nsw", v);
                }
                let q = match exp {
                    Experiment::Volume => "volume",
                    Experiment::Doubling => "ratio",
                    _ => "max_ratio",
                };
                run.scalar(format!("{q}_eps{eps}_r{r}"), est);
                self.plot(eps, "r", r, q, est);
                progress(&format!("{name} eps {eps} r {r}: {est:.6}"));
            }
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        Ok(())
    }

    fn coeff(&self, p: usize) -> Result<CoeffMatrix> {
        let h = &self.cfg.heat;
        match &h.a {
            AMatrix::Named(s) if s == "identity" => Ok(identity(p)),
            AMatrix::Named(s) => Err(LabError::InvalidParameter(format!("unknown coefficient matrix {s}"))),
            AMatrix::Entries(v) if v.len() == p * p => CoeffMatrix::new(DMatrix::from_row_slice(p, p, v), h.lambda, self.frame.m),
            AMatrix::Entries(v) => Err(LabError::InvalidParameter(format!("A needs {} entries, got {}", p * p, v.len()))),
        }
    }

    /// Heat lattice: configured box, the ℍ¹ kernel box, or a cube of five
    /// standard deviations for Euclidean frames.
    fn heat_lattice(&self, eps: f64, t: f64) -> Result<Lattice> {
        if let Some(s) = &self.cfg.lattice {
            return lattice_from_spec(s);
        }
        let h = self.cfg.heat.h;
        match self.frame.name.as_str() {
            "heisenberg1" => h1_heat_lattice(eps, t, h, self.cfg.heat.max_half),
            n if n.starts_with("euclidean") => {
                let d = self.frame.dim();
                let half = ((5.0 * (2.0 * t).sqrt()) / h).ceil() as usize;
                Lattice::centered(&vec![0.0; d], &vec![half; d], &vec![h; d], &vec![false; d])
            }
            n => Err(LabError::InvalidParameter(format!("frame {n} needs an explicit [lattice] section"))),
        }
    }

    fn write_kernel(&self, k: &KernelField, path: PathBuf) -> Result<PathBuf> {
        let n = k.lat.dim();
        let mut header: Vec<String> = expr::coordinate_names(n);
        header.push("t".into());
        header.push("value".into());
        let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut csv = Csv::create(path, &refs)?;
        for (s, t) in k.times.iter().enumerate() {
            for i in 0..k.lat.len() {
                let v = k.values[s][i];
                if v != 0.0 {
                    let mut f: Vec<String> = k.lat.point(i).into_iter().map(num).collect();
                    f.push(num(*t));
                    f.push(num(v));
                    csv.row(&f)?;
                }
            }
        }
        csv.finish()
    }

    fn heat(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        self.require_smooth()?;
        let h = self.cfg.heat.clone();
        let (fd, mc) = match h.method.as_str() {
            "fd" => (true, false),
            "mc" => (false, true),
            "both" => (true, true),
            m => return Err(LabError::InvalidParameter(format!("unknown method {m}"))),
        };
        let src = h.source.clone().unwrap_or_else(|| vec![0.0; self.frame.dim()]);
        for eps in self.eps_list()? {
            let ef = self.eps_frame(eps)?;
            let lat = self.heat_lattice(eps, h.t)?;
            let mut run = RunOutput::new(format!("heat_eps{eps}"));
            let mut kf = None;
            if fd {
                let a = self.coeff(ef.p())?;
                let k = heat_fd(&ef, &a, &lat, &src, h.t, &FdOptions { dt: h.dt, snapshots: h.snapshots.clone(), ..Default::default() })?;
                run.files.push(self.write_kernel(&k, self.out.join(format!("heat_fd_eps{eps}.csv")))?);
                for (t, m) in k.times.iter().zip(&k.mass) {
                    run.scalar(format!("fd_mass_t{t}"), *m);
                    self.plot(eps, "t", *t, "fd_mass", *m);
                }
                run.scalar("fd_dt", k.dt);
                progress(&format!("heat fd eps {eps}: {} nodes, mass {:?}", lat.len(), k.mass));
                kf = Some(k);
            }
            if mc {
                let opts = McOptions { paths: h.paths, seed: derive(self.cfg.seed, &format!("heat-{eps}")), snapshots: h.snapshots.clone(), ..Default::default() };
                let k = heat_mc(&ef, &lat, &src, h.t, &opts)?;
                run.files.push(self.write_kernel(&k, self.out.join(format!("heat_mc_eps{eps}.csv")))?);
                for (t, m) in k.times.iter().zip(&k.mass) {
                    run.scalar(format!("mc_mass_t{t}"), *m);
                    self.plot(eps, "t", *t, "mc_mass", *m);
                }
                if let Some(f) = &kf {
                    let gap = f.l1_gap(f.snapshot(h.t), &k, k.snapshot(h.t), 4)?;
                    run.scalar("l1_gap_block4", gap);
                    self.plot(eps, "t", h.t, "l1_gap_block4", gap);
                }
                progress(&format!("heat mc eps {eps}: mass {:?}", k.mass));
            }
            self.manifest.runs.push(run);
        }
        Ok(())
    }

    fn gaussfit(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        self.require_smooth()?;
        let h = self.cfg.heat.clone();
        let mut run = RunOutput::new("gaussfit");
        let mut csv = Csv::create(
            self.out.join("gaussfit.csv"),
            &["eps", "t", "C_lower", "C_upper", "c_exp_lower", "c_exp_upper", "rate", "C_lambda", "bracketed", "points"],
        )?;
        let center = vec![0.0; self.frame.dim()];
        let res = BallResolution::default();
        for eps in self.eps_list()? {
            let ef = self.eps_frame(eps)?;
            let lat = self.heat_lattice(eps, h.t)?;
            let a = self.coeff(ef.p())?;
            let k = heat_fd(&ef, &a, &lat, &center, h.t, &FdOptions { snapshots: h.snapshots.clone(), ..Default::default() })?;
            for (snap, &t) in k.times.iter().enumerate() {
                let rt = t.sqrt();
                let cache = self.cache.as_ref();
                let probe = cache::adapted(cache, &ef, &center, 3.0 * rt, &res)?;
                let dist: Vec<f64> = (0..lat.len()).map(|i| probe.field.at(&probe.lat, &lat.point(i))).collect();
                let vb = cache::adapted(cache, &ef, &center, rt, &res)?
                    .volume_mc(rt, 100_000, derive(self.cfg.seed, &format!("gaussfit-{eps}-{rt}")))?
                    .volume;
                let g = gaussian_fit(&k, snap, &dist, vb, eps)?;
                csv.row(&[
                    num(eps),
                    num(t),
                    num(g.c_lower),
                    num(g.c_upper),
                    num(g.c_exp_lower),
                    num(g.c_exp_upper),
                    num(g.rate),
                    num(g.c_lambda),
                    num(g.bracketed),
                    g.points.to_string(),
                ])?;
                for (q, v) in [("C_lower", g.c_lower), ("C_upper", g.c_upper), ("C_lambda", g.c_lambda), ("bracketed", g.bracketed)] {
                    run.scalar(format!("{q}_eps{eps}_t{t}"), v);
                    self.plot(eps, "t", t, q, v);
                }
                progress(&format!("gaussfit eps {eps} t {t}: C_lambda {:.3} bracketed {:.3}", g.c_lambda, g.bracketed));
            }
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        Ok(())
    }

    fn lift(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        if self.frame.name != "heisenberg1" {
            return Err(LabError::UnsupportedFrame(format!("the lift is available for heisenberg1 only, not {}", self.frame.name)));
        }
        let p = self.cfg.lift.clone();
        let mut run = RunOutput::new("lift-check");
        let mut csv = Csv::create(self.out.join("lift_check.csv"), &["eps", "probe", "lifted", "direct", "rel_error"])?;
        let mut worst: f64 = 0.0;
        for eps in self.eps_list()? {
            let lx = h1_heat_lattice(eps, p.t, p.h, 20)?;
            let lat6 = Lattice::from_parts(
                [lx.lower.clone(), vec![-2.4, -2.4, -2.5]].concat(),
                [lx.spacing.clone(), vec![1.2, 1.2, 1.25]].concat(),
                [lx.counts.clone(), vec![5, 5, 5]].concat(),
                vec![false; 6],
            )?;
            let opts = McOptions { paths: p.paths, seed: derive(self.cfg.seed, &format!("lift-{eps}")), ..Default::default() };
            let m = marginalize(&lift_h1_kernel(eps, &lat6, &[0.0; 6], p.t, &opts)?)?;
            let ef = self.eps_frame(eps)?;
            let direct = heat_mc(&ef, &lx, &[0.0; 3], p.t, &McOptions { seed: derive(self.cfg.seed, &format!("direct-{eps}")), ..opts })?;
            for (k, x) in p.probes.iter().enumerate() {
                let a = m.block_mean(0, x, 1)?;
                let b = direct.block_mean(0, x, 1)?;
                let rel = (a - b).abs() / b;
                worst = worst.max(rel);
                csv.row(&[num(eps), point(x), num(a), num(b), num(rel)])?;
                run.scalar(format!("rel_eps{eps}_p{k}"), rel);
                self.plot(eps, "probe", k as f64, "rel_error", rel);
            }
            progress(&format!("lift-check eps {eps}: worst relative error so far {worst:.4}"));
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        self.manifest.checks.push(Check {
            id: 1,
            name: "lift within 10%".into(),
            pass: worst <= 0.1,
            detail: format!("worst relative error {worst:.4}"),
        });
        Ok(())
    }

    fn harnack(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        self.require_smooth()?;
        let p = self.cfg.harnack.clone();
        let n = self.frame.dim();
        let mut run = RunOutput::new("harnack");
        let mut csv = Csv::create(
            self.out.join("harnack.csv"),
            &["eps", "rho", "tbar", "sup_minus", "inf_plus", "ratio", "mean_ratio", "ball_nodes"],
        )?;
        let center = vec![0.0; n];
        let src = p.source.clone().unwrap_or_else(|| {
            let mut s = vec![0.0; n];
            s[0] = 0.3;
            s
        });
        let cyl = Cylinders { rho: p.rho, xbar: center.clone(), tbar: p.tbar, samples: p.samples };
        for eps in self.eps_list()? {
            let ef = self.eps_frame(eps)?;
            let lat = match (&self.cfg.lattice, self.frame.name.as_str()) {
                (Some(s), _) => lattice_from_spec(s)?,
                (None, "heisenberg1") => acceptance::harnack_lattice(eps, p.h, p.tbar)?,
                (None, name) if name.starts_with("euclidean") => {
                    let half = (2.0 / p.h).round() as usize;
                    Lattice::centered(&center, &vec![half; n], &vec![p.h; n], &vec![false; n])?
                }
                (None, name) => return Err(LabError::InvalidParameter(format!("frame {name} needs an explicit [lattice] section"))),
            };
            let u0 = if p.sigma > 0.0 { lat.sample(acceptance::gaussian_bump(src.clone(), p.sigma)) } else { discrete_delta(&lat, &src)? };
            let probe = cache::adapted(self.cache.as_ref(), &ef, &center, p.rho, &BallResolution::default())?;
            let ball = |x: &[f64]| probe.field.at(&probe.lat, x) < p.rho;
            let a = self.coeff(ef.p())?;
            let rep = harnack_ratio(&ef, &a, &lat, u0, &cyl, &ball)?;
            csv.row(&[
                num(eps),
                num(p.rho),
                num(p.tbar),
                num(rep.sup_minus),
                num(rep.inf_plus),
                num(rep.ratio),
                num(rep.mean_ratio),
                rep.ball_nodes.to_string(),
            ])?;
            run.scalar(format!("ratio_eps{eps}"), rep.ratio);
            self.plot(eps, "rho", p.rho, "ratio", rep.ratio);
            progress(&format!("harnack eps {eps}: ratio {:.4}", rep.ratio));
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        Ok(())
    }

    fn flow(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        self.require_smooth()?;
        let p = self.cfg.flow.clone();
        let kind = FlowKind::parse(&p.kind)?;
        let n = self.frame.dim();
        let e = parse_expr(&p.phi, n, false)?;
        let phi: BoundaryFn = Arc::new(move |x: &[f64]| e.eval(x));
        let lat = match &self.cfg.lattice {
            Some(s) => lattice_from_spec(s)?,
            None if self.frame.name == "heisenberg1" => acceptance::flow_box()?,
            None => Lattice::centered(&vec![0.0; n], &vec![10; n], &vec![0.05; n], &vec![false; n])?,
        };
        let dt = p.dt.value()?;
        let mut run = RunOutput::new("flow");
        let mut diag = Csv::create(self.out.join("flow_diagnostics.csv"), &["step", "t", "eps", "sup_u", "inf_u", "sup_grad1", "energy"])?;
        let eps_list = self.eps_list()?;
        for &eps in &eps_list {
            let ef = self.eps_frame(eps)?;
            let solver = FlowSolver::new(&ef, &lat, &phi)?;
            let st = FlowState::extend(lat.clone(), phi.clone(), kind, eps)?;
            let fr = run_flow(&solver, st, p.t_end, dt)?;
            for d in &fr.diagnostics {
                diag.row(&[d.step.to_string(), num(d.t), num(d.eps), num(d.sup_u), num(d.inf_u), num(d.sup_grad1), num(d.energy)])?;
                self.plot(eps, "t", d.t, "energy", d.energy);
            }
            let last = fr.diagnostics.last().unwrap();
            run.scalar(format!("energy_eps{eps}"), last.energy);
            run.scalar(format!("sup_grad1_eps{eps}"), fr.diagnostics.iter().map(|d| d.sup_grad1).fold(0.0, f64::max));
            run.scalar(format!("dt_eps{eps}"), fr.dt);
            let mut header = expr::coordinate_names(n);
            header.push("u".into());
            let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let mut state = Csv::create(self.out.join(format!("flow_state_eps{eps}.csv")), &refs)?;
            for i in 0..lat.len() {
                let mut f: Vec<String> = lat.point(i).into_iter().map(num).collect();
                f.push(num(fr.state.u[i]));
                state.row(&f)?;
            }
            run.files.push(state.finish()?);
            progress(&format!("flow {} eps {eps}: {} steps of {:.3e}, energy {:.6}", p.kind, fr.diagnostics.len() - 1, fr.dt, last.energy));
        }
        run.files.insert(0, diag.finish()?);
        if eps_list.len() >= 2 && p.t_end > 0.0 {
            let upper: Vec<f64> = (0..n).map(|k| lat.upper(k)).collect();
            let table = eps_convergence_study(self.frame.clone(), &lat, phi, kind, &eps_list, p.t_end, (&lat.lower, &upper), 0.0)?;
            for (k, g) in table.gaps.iter().enumerate() {
                run.scalar(format!("gap{k}"), *g);
                self.plot(eps_list[k + 1], "t", p.t_end, "gap", *g);
            }
        }
        self.manifest.runs.push(run);
        Ok(())
    }

    fn schauder(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        self.require_smooth()?;
        let p = self.cfg.schauder.clone();
        let n = self.frame.dim();
        let e = parse_expr(&p.w, n, true)?;
        let w = move |x: &[f64], t: f64| {
            let mut v = x.to_vec();
            v.push(t);
            e.eval(&v)
        };
        let lat = match &self.cfg.lattice {
            Some(s) => lattice_from_spec(s)?,
            None => {
                let half = (0.5 / p.h).round() as usize;
                Lattice::centered(&vec![0.0; n], &vec![half; n], &vec![p.h; n], &vec![false; n])?
            }
        };
        let mut run = RunOutput::new("schauder");
        let mut csv = Csv::create(self.out.join("schauder.csv"), &["eps", "alpha", "c2a_norm", "ca_f_norm", "c1a_norm", "ratio"])?;
        let mid: Vec<f64> = (0..n).map(|k| 0.5 * (lat.lower[k] + lat.upper(k))).collect();
        let half: Vec<f64> = (0..n).map(|k| 0.5 * (lat.upper(k) - lat.lower[k])).collect();
        let bx = |s: f64| -> (Vec<f64>, Vec<f64>) { ((0..n).map(|k| mid[k] - s * half[k]).collect(), (0..n).map(|k| mid[k] + s * half[k]).collect()) };
        for eps in self.eps_list()? {
            let ef = self.eps_frame(eps)?;
            let metric = SpaceMetric::lattice(&ef, &lat)?;
            let pdim = ef.p();
            let a = move |_: &[f64]| DMatrix::identity(pdim, pdim);
            let prob = SchauderProblem {
                w: &w,
                a: &a,
                times: p.times.clone(),
                alpha: p.alpha,
                k: bx(0.4),
                k_delta: bx(0.6),
                pairs: p.pairs,
                seed: derive(self.cfg.seed, "schauder"),
            };
            let r = schauder_ratio(&ef, &metric, &prob)?;
            csv.row(&[num(eps), num(r.alpha), num(r.c2a_norm), num(r.ca_f_norm), num(r.c1a_norm), num(r.ratio)])?;
            run.scalar(format!("ratio_eps{eps}"), r.ratio);
            self.plot(eps, "alpha", p.alpha, "ratio", r.ratio);
            progress(&format!("schauder eps {eps}: ratio {:.4}", r.ratio));
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        Ok(())
    }

    fn acceptance(&mut self, progress: &mut (dyn FnMut(&str) + Send)) -> Result<()> {
        let p = self.cfg.acceptance.clone();
        let mut run = RunOutput::new("acceptance");
        let mut csv = Csv::create(self.out.join("acceptance.csv"), &["id", "name", "pass", "detail"])?;
        let outcomes = acceptance::run_suite(&p.criteria, self.cfg.seed, self.cache.as_ref(), p.rerun_threads, &mut |o| progress(&o.line()));
        for o in &outcomes {
            csv.row(&[o.id.to_string(), o.name.clone(), o.pass.to_string(), format!("\"{}\"", o.detail.replace('"', "'"))])?;
            for s in &o.scalars {
                run.scalar(format!("c{}/{}", o.id, s.name), s.value);
            }
            self.manifest.checks.push(Check { id: o.id, name: o.name.clone(), pass: o.pass, detail: o.detail.clone() });
        }
        run.files.push(csv.finish()?);
        self.manifest.runs.push(run);
        Ok(())
    }
}

/// Reads a manifest and writes its plot data, next to it unless `out` is given.
pub fn plot_data_from(manifest_path: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let m = ResultManifest::read(manifest_path)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    emit_plot_data(&m, &dir)
}
