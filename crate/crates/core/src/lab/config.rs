//! Experiment configuration: a TOML document with one section per module.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Dist,
    Volume,
    Doubling,
    Poincare,
    Heat,
    Gaussfit,
    LiftCheck,
    Harnack,
    Flow,
    Schauder,
    Acceptance,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dist => "dist",
            Experiment::Volume => "volume",
            Experiment::Doubling => "doubling",
            Experiment::Poincare => "poincare",
            Experiment::Heat => "heat",
            Experiment::Gaussfit => "gaussfit",
            Experiment::LiftCheck => "lift-check",
            Experiment::Harnack => "harnack",
            Experiment::Flow => "flow",
            Experiment::Schauder => "schauder",
            Experiment::Acceptance => "acceptance",
        }
    }
}

/// Box, spacing and periodic axes. `h` holds one spacing or one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: Vec<f64>,
    #[serde(default)]
    pub periodic: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistParams {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    /// lattice, control or both
    pub method: String,
}

impl Default for DistParams {
    fn default() -> Self {
        DistParams { from: vec![0.0; 3], to: vec![0.0, 0.0, 1.0], method: "both".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeParams {
    pub center: Option<Vec<f64>>,
    pub r_list: Vec<f64>,
    pub samples: usize,
    pub half_nodes: usize,
}

impl Default for VolumeParams {
    fn default() -> Self {
        VolumeParams { center: None, r_list: vec![0.05, 0.1, 0.2], samples: 50_000, half_nodes: 14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatParams {
    pub t: f64,
    /// fd, mc or both
    pub method: String,
    /// "identity" or a row-major list of p² entries
    pub a: AMatrix,
    pub lambda: f64,
    pub h: f64,
    pub max_half: usize,
    pub source: Option<Vec<f64>>,
    pub paths: usize,
    pub snapshots: Vec<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AMatrix {
    Named(String),
    Entries(Vec<f64>),
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams {
            t: 0.1,
            method: "fd".into(),
            a: AMatrix::Named("identity".into()),
            lambda: 2.0,
            h: 0.1,
            max_half: 160,
            source: None,
            paths: 200_000,
            snapshots: Vec::new(),
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftParams {
    pub t: f64,
    pub paths: usize,
    pub h: f64,
    pub probes: Vec<Vec<f64>>,
}

impl Default for LiftParams {
    fn default() -> Self {
        LiftParams {
            t: 0.1,
            paths: 500_000,
            h: 0.15,
            probes: vec![
                vec![0.0, 0.0, 0.0],
                vec![0.3, 0.0, 0.0],
                vec![0.0, 0.3, 0.0],
                vec![0.0, 0.0, 0.2],
                vec![0.3, -0.3, 0.1],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnackParams {
    pub rho: f64,
    pub tbar: f64,
    pub samples: usize,
    pub h: f64,
    /// width of the Gaussian bump used as initial datum
    pub sigma: f64,
    pub source: Option<Vec<f64>>,
}

impl Default for HarnackParams {
    fn default() -> Self {
        HarnackParams { rho: 0.1, tbar: 0.1, samples: 6, h: 0.05, sigma: 0.05, source: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub kind: String,
    pub phi: String,
    pub t_end: f64,
    /// "auto" or a number
    pub dt: DtSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSpec {
    Auto(String),
    Fixed(f64),
}

impl DtSpec {
    pub fn value(&self) -> Result<Option<f64>> {
        match self {
            DtSpec::Fixed(v) if *v > 0.0 => Ok(Some(*v)),
            DtSpec::Fixed(v) => Err(LabError::InvalidParameter(format!("dt must be positive, got {v}"))),
            DtSpec::Auto(s) if s == "auto" => Ok(None),
            DtSpec::Auto(s) => s
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .map(Some)
                .ok_or_else(|| LabError::InvalidParameter(format!("dt must be \"auto\" or positive, got {s}"))),
        }
    }
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { kind: "mcf".into(), phi: "x1^2".into(), t_end: 0.02, dt: DtSpec::Auto("auto".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchauderParams {
    pub alpha: f64,
    /// manufactured solution in x1..xn and t
    pub w: String,
    pub h: f64,
    pub times: Vec<f64>,
    pub pairs: usize,
}

impl Default for SchauderParams {
    fn default() -> Self {
        SchauderParams { alpha: 0.5, w: "x1^2 + x2^2".into(), h: 0.1, times: vec![0.0, 0.02, 0.04], pairs: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceParams {
    /// Criterion ids to run, all when empty.
    pub criteria: Vec<usize>,
    /// Thread count of the determinism rerun.
    pub rerun_threads: usize,
}

impl Default for AcceptanceParams {
    fn default() -> Self {
        AcceptanceParams { criteria: Vec::new(), rerun_threads: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Built-in name or path to a frame file.
    #[serde(default = "default_frame")]
    pub frame: String,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads, 0 for the default pool.
    #[serde(default)]
    pub threads: usize,
    /// Reuse ball tables stored under output/cache.
    #[serde(default = "yes")]
    pub cache: bool,
    #[serde(default)]
    pub lattice: Option<LatticeSpec>,
    #[serde(default)]
    pub dist: DistParams,
    #[serde(default)]
    pub volume: VolumeParams,
    #[serde(default)]
    pub heat: HeatParams,
    #[serde(default)]
    pub lift: LiftParams,
    #[serde(default)]
    pub harnack: HarnackParams,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub schauder: SchauderParams,
    #[serde(default)]
    pub acceptance: AcceptanceParams,
}

fn default_frame() -> String {
    "heisenberg1".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Defaults for `experiment` with the given seed.
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            frame: default_frame(),
            eps_list: vec![1.0, 0.5, 0.1, 0.0],
            seed,
            output: default_output(),
            threads: 0,
            cache: true,
            lattice: None,
            dist: DistParams::default(),
            volume: VolumeParams::default(),
            heat: HeatParams::default(),
            lift: LiftParams::default(),
            harnack: HarnackParams::default(),
            flow: FlowParams::default(),
            schauder: SchauderParams::default(),
            acceptance: AcceptanceParams::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => line_col(text, span.start),
                None => (0, 0),
            };
            LabError::Parse { line, column, msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::from(e).context(path.display().to_string()))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_list.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(LabError::InvalidParameter(format!("eps_list must hold finite values ≥ 0, got {:?}", self.eps_list)));
        }
        if self.eps_list.windows(2).any(|w| w[1] > w[0]) {
            return Err(LabError::InvalidParameter(format!("eps_list must be sorted descending, got {:?}", self.eps_list)));
        }
        if let Some(l) = &self.lattice {
            let n = l.lower.len();
            let per_ok = l.periodic.is_empty() || l.periodic.len() == n;
            let h_ok = l.h.len() == 1 || l.h.len() == n;
            if n == 0 || l.upper.len() != n || !per_ok || !h_ok || l.h.iter().any(|h| !(*h > 0.0)) {
                return Err(LabError::InvalidParameter("lattice needs matching lower/upper/h/periodic lengths and h > 0".into()));
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::parse("experiment = \"doubling\"\nseed = 3\neps_list = [1.0, 0.5, 0.0]\n").unwrap();
        assert_eq!(cfg.experiment, Experiment::Doubling);
        assert_eq!(cfg.frame, "heisenberg1");
        let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_eps_lists_and_missing_seed() {
        let neg = ExperimentConfig::parse("experiment = \"volume\"\nseed = 1\neps_list = [0.5, -0.1]\n");
        assert!(matches!(neg, Err(LabError::InvalidParameter(_))));
        let asc = ExperimentConfig::parse("experiment = \"volume\"\nseed = 1\neps_list = [0.0, 0.5]\n");
        assert!(matches!(asc, Err(LabError::InvalidParameter(_))));
        assert!(matches!(ExperimentConfig::parse("experiment = \"volume\"\n"), Err(LabError::Parse { .. })));
    }

    #[test]
    fn parse_errors_carry_positions() {
        match ExperimentConfig::parse("experiment = \"volume\"\nseed = 1\nfoo = = 2\n") {
            Err(LabError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 7)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dt_spec() {
        assert_eq!(DtSpec::Auto("auto".into()).value().unwrap(), None);
        assert_eq!(DtSpec::Fixed(0.01).value().unwrap(), Some(0.01));
        assert!(DtSpec::Auto("soon".into()).value().is_err());
    }
}
