use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cclab_core::lab::config::{AMatrix, DtSpec};
use cclab_core::lab::{self, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cclab", version, about = "Riemannian approximation of sub-Riemannian structures: numerical laboratory")]
struct Cli {
    /// Experiment config (TOML); flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct Common {
    /// Built-in frame name or frame file.
    #[arg(long)]
    frame: Option<String>,
    /// Single ε value.
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    /// Comma-separated ε values (any order, run from largest to smallest).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eps_list: Option<Vec<f64>>,
    /// Skip the on-disk ball-table cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct MeasureArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    r_list: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    center: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Distance between two points by lattice search and/or control shooting.
    Dist {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        to: Option<Vec<f64>>,
        /// lattice, control or both
        #[arg(long)]
        method: Option<String>,
    },
    /// Monte-Carlo ball volumes (with the NSW polynomial for comparison).
    Volume(MeasureArgs),
    /// Doubling ratios |B(2r)| / |B(r)|.
    Doubling(MeasureArgs),
    /// Poincaré ratios over the default test functions.
    Poincare(MeasureArgs),
    /// Heat kernel by finite differences and/or Monte Carlo.
    Heat {
        #[command(flatten)]
        common: Common,
        /// "identity" or p² comma-separated entries, row major.
        #[arg(long = "A")]
        a: Option<String>,
        #[arg(long)]
        t: Option<f64>,
        /// fd, mc or both
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        source: Option<Vec<f64>>,
    },
    /// Two-sided Gaussian envelope fit of the heat kernel.
    Gaussfit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        /// Extra fit times.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<f64>>,
    },
    /// Marginal of the lifted ℝ⁶ kernel against the direct ℍ¹ kernel.
    LiftCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Harnack ratio sup over Q⁻ / inf over Q⁺.
    Harnack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        tbar: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        /// Bump width of the initial datum, 0 for a point mass.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Graph mean-curvature or total-variation flow.
    Flow {
        #[command(flatten)]
        common: Common,
        /// tv or mcf
        #[arg(long)]
        kind: Option<String>,
        /// Boundary and initial datum in x1..xn.
        #[arg(long)]
        phi: Option<String>,
        #[arg(long)]
        t_end: Option<f64>,
        /// "auto" or a step size.
        #[arg(long)]
        dt: Option<String>,
    },
    /// Schauder ratio for a manufactured solution w(x, t).
    Schauder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        w: Option<String>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Acceptance suite; prints one line per criterion.
    Acceptance {
        /// Criterion ids, all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<usize>>,
        #[arg(long)]
        rerun_threads: Option<usize>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Tidy CSV for external plotting from a manifest.
    PlotData {
        /// Defaults to <out>/manifest.json.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

impl Cmd {
    fn experiment(&self) -> Option<Experiment> {
        Some(match self {
            Cmd::Dist { .. } => Experiment::Dist,
            Cmd::Volume(_) => Experiment::Volume,
            Cmd::Doubling(_) => Experiment::Doubling,
            Cmd::Poincare(_) => Experiment::Poincare,
            Cmd::Heat { .. } => Experiment::Heat,
            Cmd::Gaussfit { .. } => Experiment::Gaussfit,
            Cmd::LiftCheck { .. } => Experiment::LiftCheck,
            Cmd::Harnack { .. } => Experiment::Harnack,
            Cmd::Flow { .. } => Experiment::Flow,
            Cmd::Schauder { .. } => Experiment::Schauder,
            Cmd::Acceptance { .. } => Experiment::Acceptance,
            Cmd::PlotData { .. } => return None,
        })
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_common(cfg: &mut ExperimentConfig, c: Common) {
    set(&mut cfg.frame, c.frame);
    if let Some(e) = c.eps {
        cfg.eps_list = vec![e];
    }
    if let Some(mut l) = c.eps_list {
        l.sort_by(|a, b| b.total_cmp(a));
        cfg.eps_list = l;
    }
    if c.no_cache {
        cfg.cache = false;
    }
}

fn apply_measure(cfg: &mut ExperimentConfig, m: MeasureArgs) {
    apply_common(cfg, m.common);
    set(&mut cfg.volume.r_list, m.r_list);
    set(&mut cfg.volume.samples, m.samples);
    if m.center.is_some() {
        cfg.volume.center = m.center;
    }
}

fn build_config(cli: &Cli, cmd: Cmd, exp: Experiment) -> Result<ExperimentConfig, cclab_core::LabError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let mut c = ExperimentConfig::load(p)?;
            c.experiment = exp;
            c
        }
        None => ExperimentConfig::new(exp, 0),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    set(&mut cfg.output, cli.out.clone());
    match cmd {
        Cmd::Dist { common, from, to, method } => {
            apply_common(&mut cfg, common);
            set(&mut cfg.dist.from, from);
            set(&mut cfg.dist.to, to);
            set(&mut cfg.dist.method, method);
        }
        Cmd::Volume(m) | Cmd::Doubling(m) | Cmd::Poincare(m) => apply_measure(&mut cfg, m),
        Cmd::Heat { common, a, t, method, h, paths, source } => {
            apply_common(&mut cfg, common);
            if let Some(a) = a {
                cfg.heat.a = if a.trim() == "identity" {
                    AMatrix::Named(a.trim().into())
                } else {
                    let v: Result<Vec<f64>, _> = a.split(',').map(|s| s.trim().parse::<f64>()).collect();
                    AMatrix::Entries(v.map_err(|e| cclab_core::LabError::InvalidParameter(format!("--A: {e}")))?)
                };
            }
            set(&mut cfg.heat.t, t);
            set(&mut cfg.heat.method, method);
            set(&mut cfg.heat.h, h);
            set(&mut cfg.heat.paths, paths);
            if source.is_some() {
                cfg.heat.source = source;
            }
        }
        Cmd::Gaussfit { common, t, h, snapshots } => {
            apply_common(&mut cfg, common);
            set(&mut cfg.heat.t, t);
            set(&mut cfg.heat.h, h);
            set(&mut cfg.heat.snapshots, snapshots);
        }
        Cmd::LiftCheck { common, t, paths } => {
            apply_common(&mut cfg, common);
            set(&mut cfg.lift.t, t);
            set(&mut cfg.lift.paths, paths);
        }
        Cmd::Harnack { common, rho, tbar, h, sigma } => {
            apply_common(&mut cfg, common);
            set(&mut cfg.harnack.rho, rho);
            set(&mut cfg.harnack.tbar, tbar);
            set(&mut cfg.harnack.h, h);
            set(&mut cfg.harnack.sigma, sigma);
        }
        Cmd::Flow { common, kind, phi, t_end, dt } => {
            apply_common(&mut cfg, common);
            set(&mut cfg.flow.kind, kind);
            set(&mut cfg.flow.phi, phi);
            set(&mut cfg.flow.t_end, t_end);
            if let Some(d) = dt {
                cfg.flow.dt = DtSpec::Auto(d);
            }
        }
        Cmd::Schauder { common, alpha, w, h } => {
            apply_common(&mut cfg, common);
            set(&mut cfg.schauder.alpha, alpha);
            set(&mut cfg.schauder.w, w);
            set(&mut cfg.schauder.h, h);
        }
        Cmd::Acceptance { criteria, rerun_threads, no_cache } => {
            set(&mut cfg.acceptance.criteria, criteria);
            set(&mut cfg.acceptance.rerun_threads, rerun_threads);
            if no_cache {
                cfg.cache = false;
            }
        }
        Cmd::PlotData { .. } => unreachable!(),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let cmd = std::mem::replace(&mut cli.cmd, Cmd::PlotData { manifest: None });
    let Some(exp) = cmd.experiment() else {
        let Cmd::PlotData { manifest } = cmd else { unreachable!() };
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let path = manifest.unwrap_or_else(|| out.join("manifest.json"));
        return match lab::plot_data_from(&path, cli.out.as_deref()) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("cclab: {e}");
                ExitCode::from(2)
            }
        };
    };
    let cfg = match build_config(&cli, cmd, exp) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cclab: {e}");
            return ExitCode::from(2);
        }
    };
    let acceptance = exp == Experiment::Acceptance;
    let mut progress = |line: &str| {
        if acceptance {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    };
    match lab::run_with_progress(&cfg, &mut progress) {
        Ok(m) => {
            eprintln!("wrote {}", cfg.output.join("manifest.json").display());
            for c in m.checks.iter().filter(|c| !c.pass) {
                eprintln!("check failed: {} ({})", c.name, c.detail);
            }
            if m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("cclab: {e}");
            ExitCode::from(2)
        }
    }
}
