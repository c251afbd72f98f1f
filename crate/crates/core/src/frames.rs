//! Hörmander frames, their commutator enumeration and the ε-weighted frames.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Deserialize;

use crate::error::{LabError, Result};
use crate::expr::{self, Expr};
use crate::lattice::{Lattice, TWO_PI};

/// Coefficients of one vector field at a point.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Closed-form bracket table: fills `out` with [Y_i, Y_j](x) and returns true,
/// or returns false when the pair is not tabulated.
pub type BracketFn = Arc<dyn Fn(usize, usize, &[f64], &mut [f64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct VectorFieldSpec {
    pub ambient_dim: usize,
    pub fields: Vec<FieldFn>,
    pub closed_form_brackets: Option<BracketFn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Heisenberg1,
    Rototranslation,
    Grushin,
    Example32,
    Euclidean(usize),
}

impl Builtin {
    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        match lower.as_str() {
            "heisenberg1" | "heisenberg" | "h1" => return Ok(Builtin::Heisenberg1),
            "rototranslation" | "rt" => return Ok(Builtin::Rototranslation),
            "grushin" => return Ok(Builtin::Grushin),
            "example32" => return Ok(Builtin::Example32),
            _ => {}
        }
        let n = lower
            .strip_prefix("euclidean")
            .map(|s| s.trim_start_matches('(').trim_end_matches(')'))
            .and_then(|s| s.parse::<usize>().ok());
        match n {
            Some(n) if (1..=6).contains(&n) => Ok(Builtin::Euclidean(n)),
            _ => Err(LabError::UnsupportedFrame(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Generator(usize),
    Bracket(usize, usize),
}

#[derive(Clone)]
pub struct Frame {
    pub name: String,
    pub m: usize,
    pub step: usize,
    pub degrees: Vec<usize>,
    pub origins: Vec<Origin>,
    pub spec: VectorFieldSpec,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
    /// False for frames with non-smooth coefficients (excluded from heat and flows).
    pub smooth: bool,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("m", &self.m)
            .field("p", &self.p())
            .field("step", &self.step)
            .field("degrees", &self.degrees)
            .finish()
    }
}

fn field(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> FieldFn {
    Arc::new(f)
}

pub fn build_builtin_frame(b: Builtin) -> Frame {
    let big = 10.0;
    match b {
        Builtin::Heisenberg1 => Frame {
            name: "heisenberg1".into(),
            m: 2,
            step: 2,
            degrees: vec![1, 1, 2],
            origins: vec![Origin::Generator(0), Origin::Generator(1), Origin::Bracket(0, 1)],
            spec: VectorFieldSpec {
                ambient_dim: 3,
                fields: vec![
                    field(|x, o| {
                        o[0] = 1.0;
                        o[1] = 0.0;
                        o[2] = -x[1];
                    }),
                    field(|x, o| {
                        o[0] = 0.0;
                        o[1] = 1.0;
                        o[2] = x[0];
                    }),
                    field(|_, o| {
                        o[0] = 0.0;
                        o[1] = 0.0;
                        o[2] = 2.0;
                    }),
                ],
                closed_form_brackets: Some(Arc::new(|i, j, _x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    match (i, j) {
                        (0, 1) => o[2] = 2.0,
                        (1, 0) => o[2] = -2.0,
                        _ if i < 3 && j < 3 => {}
                        _ => return false,
                    }
                    true
                })),
            },
            lower: vec![-big; 3],
            upper: vec![big; 3],
            periodic: vec![false; 3],
            smooth: true,
        },
        Builtin::Rototranslation => Frame {
            name: "rototranslation".into(),
            m: 2,
            step: 2,
            degrees: vec![1, 1, 2],
            origins: vec![Origin::Generator(0), Origin::Generator(1), Origin::Bracket(0, 1)],
            spec: VectorFieldSpec {
                ambient_dim: 3,
                fields: vec![
                    field(|x, o| {
                        o[0] = x[2].cos();
                        o[1] = x[2].sin();
                        o[2] = 0.0;
                    }),
                    field(|_, o| {
                        o[0] = 0.0;
                        o[1] = 0.0;
                        o[2] = 1.0;
                    }),
                    field(|x, o| {
                        o[0] = x[2].sin();
                        o[1] = -x[2].cos();
                        o[2] = 0.0;
                    }),
                ],
                closed_form_brackets: Some(Arc::new(|i, j, x, o| {
                    if i > 2 || j > 2 {
                        return false;
                    }
                    let (s, c) = x[2].sin_cos();
                    o.iter_mut().for_each(|v| *v = 0.0);
                    // [X1,X2] = Y3, [X2,Y3] = X1, [X1,Y3] = 0
                    let sign = if i < j { 1.0 } else { -1.0 };
                    match (i.min(j), i.max(j)) {
                        (0, 1) => {
                            o[0] = sign * s;
                            o[1] = -sign * c;
                        }
                        (1, 2) => {
                            o[0] = sign * c;
                            o[1] = sign * s;
                        }
                        _ => {}
                    }
                    true
                })),
            },
            lower: vec![-big, -big, 0.0],
            upper: vec![big, big, TWO_PI],
            periodic: vec![false, false, true],
            smooth: true,
        },
        Builtin::Grushin => Frame {
            name: "grushin".into(),
            m: 2,
            step: 2,
            degrees: vec![1, 1, 2],
            origins: vec![Origin::Generator(0), Origin::Generator(1), Origin::Bracket(0, 1)],
            spec: VectorFieldSpec {
                ambient_dim: 2,
                fields: vec![
                    field(|_, o| {
                        o[0] = 1.0;
                        o[1] = 0.0;
                    }),
                    field(|x, o| {
                        o[0] = 0.0;
                        o[1] = x[0].abs();
                    }),
                    field(|x, o| {
                        o[0] = 0.0;
                        o[1] = if x[0] > 0.0 {
                            1.0
                        } else if x[0] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }),
                ],
                closed_form_brackets: None,
            },
            lower: vec![-big; 2],
            upper: vec![big; 2],
            periodic: vec![false; 2],
            smooth: false,
        },
        Builtin::Example32 => {
            // coordinates (x1, x2, x3, x4, θ)
            let fields = vec![
                field(|x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[0] = x[4].cos();
                    o[1] = x[4].sin();
                }),
                field(|_, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[4] = 1.0;
                }),
                field(|_, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[2] = 1.0;
                }),
                field(|x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[3] = x[2] * x[2];
                }),
                field(|x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[0] = x[4].sin();
                    o[1] = -x[4].cos();
                }),
                field(|x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[3] = 2.0 * x[2];
                }),
                field(|x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[0] = x[4].cos();
                    o[1] = x[4].sin();
                }),
                field(|x, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[0] = -x[4].cos();
                    o[1] = -x[4].sin();
                }),
                field(|_, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[3] = 2.0;
                }),
                field(|_, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    o[3] = -2.0;
                }),
            ];
            Frame {
                name: "example32".into(),
                m: 4,
                step: 3,
                degrees: vec![1, 1, 1, 1, 2, 2, 3, 3, 3, 3],
                origins: vec![
                    Origin::Generator(0),
                    Origin::Generator(1),
                    Origin::Generator(2),
                    Origin::Generator(3),
                    Origin::Bracket(0, 1),
                    Origin::Bracket(2, 3),
                    Origin::Bracket(1, 4),
                    Origin::Bracket(4, 1),
                    Origin::Bracket(2, 5),
                    Origin::Bracket(5, 2),
                ],
                spec: VectorFieldSpec { ambient_dim: 5, fields, closed_form_brackets: None },
                lower: vec![-big, -big, -big, -big, 0.0],
                upper: vec![big, big, big, big, TWO_PI],
                periodic: vec![false, false, false, false, true],
                smooth: true,
            }
        }
        Builtin::Euclidean(n) => Frame {
            name: format!("euclidean{n}"),
            m: n,
            step: 1,
            degrees: vec![1; n],
            origins: (0..n).map(Origin::Generator).collect(),
            spec: VectorFieldSpec {
                ambient_dim: n,
                fields: (0..n)
                    .map(|k| {
                        field(move |_, o| {
                            o.iter_mut().for_each(|v| *v = 0.0);
                            o[k] = 1.0;
                        })
                    })
                    .collect(),
                closed_form_brackets: Some(Arc::new(move |i, j, _, o| {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    i < n && j < n
                })),
            },
            lower: vec![-big; n],
            upper: vec![big; n],
            periodic: vec![false; n],
            smooth: true,
        },
    }
}

/// Build a frame by name: a built-in identifier or a path to a frame file.
pub fn load_frame(name_or_path: &str) -> Result<Frame> {
    match Builtin::parse(name_or_path) {
        Ok(b) => Ok(build_builtin_frame(b)),
        Err(e) => {
            let path = std::path::Path::new(name_or_path);
            if path.exists() {
                let text = std::fs::read_to_string(path)?;
                frame_from_toml(&text)
            } else {
                Err(e)
            }
        }
    }
}

impl Frame {
    pub fn dim(&self) -> usize {
        self.spec.ambient_dim
    }

    pub fn p(&self) -> usize {
        self.spec.fields.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn wrap(&self, x: &mut [f64]) {
        for k in 0..self.dim() {
            if self.periodic[k] {
                x[k] = self.lower[k] + (x[k] - self.lower[k]).rem_euclid(TWO_PI);
            }
        }
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LabError::InvalidParameter(format!(
                "point has {} coordinates, frame {} lives in dimension {}",
                x.len(),
                self.name,
                self.dim()
            )));
        }
        for k in 0..self.dim() {
            if !x[k].is_finite() || (!self.periodic[k] && (x[k] < self.lower[k] || x[k] > self.upper[k])) {
                return Err(LabError::OutOfDomain(format!("{x:?} outside the domain of {}", self.name)));
            }
        }
        Ok(())
    }

    /// Y_i(x) written into `out`.
    #[inline]
    pub fn eval(&self, i: usize, x: &[f64], out: &mut [f64]) {
        (self.spec.fields[i])(x, out)
    }

    pub fn eval_vec(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut o = vec![0.0; self.dim()];
        self.eval(i, x, &mut o);
        o
    }

    /// [Y_i, Y_j](x).
    pub fn bracket(&self, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.p();
        if i >= p || j >= p {
            return Err(LabError::InvalidParameter(format!("bracket index out of range (p = {p})")));
        }
        self.check_domain(x)?;
        let mut out = vec![0.0; self.dim()];
        if i == j {
            return Ok(out);
        }
        if let Some(table) = &self.spec.closed_form_brackets {
            if table(i, j, x, &mut out) {
                return Ok(out);
            }
        }
        Ok(self.bracket_fd(i, j, x))
    }

    /// Centered finite-difference bracket: Σ_a Y_i^a ∂_a Y_j − Y_j^a ∂_a Y_i.
    pub fn bracket_fd(&self, i: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let h = 1e-5 * self.diameter();
        bracket_of(self.dim(), &*self.spec.fields[i], &*self.spec.fields[j], x, h)
    }

    /// n×p matrix of the Y fields at x (columns are fields).
    pub fn coeff_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, self.p());
        let mut col = vec![0.0; n];
        for i in 0..self.p() {
            self.eval(i, x, &mut col);
            for k in 0..n {
                m[(k, i)] = col[k];
            }
        }
        m
    }

    /// Sampled Hörmander rank check over `samples` points drawn from `[lo, hi]`.
    pub fn check_rank(&self, lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> Result<()> {
        let mut rng = crate::rng::stream(seed, 0);
        let n = self.dim();
        let mut x = vec![0.0; n];
        for _ in 0..samples {
            for k in 0..n {
                x[k] = rng.random_range(lo[k]..=hi[k]);
            }
            let sv = self.coeff_matrix(&x).singular_values();
            let max = sv.max();
            let rank = sv.iter().filter(|s| **s > 1e-10 * max).count();
            if rank < n {
                return Err(LabError::InvalidParameter(format!(
                    "frame {} spans only {rank} dimensions at {x:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Bracket of two arbitrary fields by centered differences of the coefficients.
pub fn bracket_of(
    n: usize,
    a: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync),
    b: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync),
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut va = vec![0.0; n];
    let mut vb = vec![0.0; n];
    a(x, &mut va);
    b(x, &mut vb);
    let mut out = vec![0.0; n];
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for k in 0..n {
        if va[k] == 0.0 && vb[k] == 0.0 {
            continue;
        }
        xp[k] = x[k] + h;
        b(&xp, &mut fp);
        xp[k] = x[k] - h;
        b(&xp, &mut fm);
        for c in 0..n {
            out[c] += va[k] * (fp[c] - fm[c]) / (2.0 * h);
        }
        xp[k] = x[k] + h;
        a(&xp, &mut fp);
        xp[k] = x[k] - h;
        a(&xp, &mut fm);
        for c in 0..n {
            out[c] -= vb[k] * (fp[c] - fm[c]) / (2.0 * h);
        }
        xp[k] = x[k];
    }
    out
}

/// Canonical enumeration of iterated brackets from the generators: order 2
/// uses [X_i, X_j] for i < j; order k ≥ 3 uses [X_i, Z] followed by [Z, X_i]
/// for each Z of order k−1. Entries that vanish on all sample points are
/// dropped; repeated fields are kept as distinct entries.
pub fn enumerate_frame(
    name: &str,
    generators: Vec<FieldFn>,
    step: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    periodic: Vec<bool>,
    closed: Option<BracketFn>,
) -> Result<Frame> {
    let n = lower.len();
    let m = generators.len();
    if m == 0 || step == 0 {
        return Err(LabError::InvalidParameter("frame needs generators and step ≥ 1".into()));
    }
    let diam = lower.iter().zip(&upper).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    let h = 1e-5 * diam;
    let mut rng = crate::rng::stream(0x5eed, 7);
    let probes: Vec<Vec<f64>> = (0..24)
        .map(|_| (0..n).map(|k| rng.random_range(lower[k]..=upper[k])).collect())
        .collect();

    let mut fields: Vec<FieldFn> = generators;
    let mut degrees = vec![1; m];
    let mut origins: Vec<Origin> = (0..m).map(Origin::Generator).collect();
    let mut prev: Vec<usize> = (0..m).collect();
    for k in 2..=step {
        let mut pairs = Vec::new();
        if k == 2 {
            for i in 0..m {
                for j in i + 1..m {
                    pairs.push((i, j));
                }
            }
        } else {
            for &z in &prev {
                for i in 0..m {
                    pairs.push((i, z));
                    pairs.push((z, i));
                }
            }
        }
        let mut level = Vec::new();
        for (i, j) in pairs {
            let fi = fields[i].clone();
            let fj = fields[j].clone();
            let table = closed.clone();
            let f: FieldFn = Arc::new(move |x: &[f64], o: &mut [f64]| {
                if let Some(t) = &table {
                    if t(i, j, x, o) {
                        return;
                    }
                }
                let v = bracket_of(o.len(), &*fi, &*fj, x, h);
                o.copy_from_slice(&v);
            });
            let mut buf = vec![0.0; n];
            let scale = probes
                .iter()
                .map(|x| {
                    f(x, &mut buf);
                    buf.iter().fold(0.0f64, |a, v| a.max(v.abs()))
                })
                .fold(0.0f64, f64::max);
            if scale > 1e-6 {
                level.push(fields.len());
                fields.push(f);
                degrees.push(k);
                origins.push(Origin::Bracket(i, j));
            }
        }
        prev = level;
    }
    Ok(Frame {
        name: name.to_string(),
        m,
        step,
        degrees,
        origins,
        spec: VectorFieldSpec { ambient_dim: n, fields, closed_form_brackets: closed },
        lower,
        upper,
        periodic,
        smooth: true,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    name: Option<String>,
    ambient_dim: usize,
    step: usize,
    generators: Vec<Vec<String>>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    periodic: Option<Vec<bool>>,
    #[serde(default)]
    bracket: Vec<BracketEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BracketEntry {
    i: usize,
    j: usize,
    coeffs: Vec<String>,
}

fn locate_line(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.contains(needle)).map(|p| p + 1).unwrap_or(0)
}

/// Frame file: TOML with `ambient_dim`, `step`, `generators` (one list of
/// coefficient expressions per field, in x1..xn) and optional `[[bracket]]`
/// entries (1-based field indices i, j and coefficient expressions).
pub fn frame_from_toml(text: &str) -> Result<Frame> {
    let file: FrameFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map(|p| p + 1).unwrap_or(0) + 1;
                (line, column)
            })
            .unwrap_or((0, 0));
        LabError::Parse { line, column, msg: e.message().to_string() }
    })?;
    let n = file.ambient_dim;
    if n == 0 || n > 8 {
        return Err(LabError::InvalidParameter("ambient_dim must be in 1..=8".into()));
    }
    let names = expr::coordinate_names(n);
    let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let compile = |row: &[String]| -> Result<Vec<Expr>> {
        if row.len() != n {
            return Err(LabError::Parse {
                line: locate_line(text, &row.first().cloned().unwrap_or_default()),
                column: 1,
                msg: format!("expected {n} coefficients, got {}", row.len()),
            });
        }
        row.iter().map(|s| expr::parse(s, &names, locate_line(text, s))).collect()
    };
    let mut generators = Vec::new();
    for row in &file.generators {
        let exprs = Arc::new(compile(row)?);
        generators.push(Arc::new(move |x: &[f64], o: &mut [f64]| {
            for (k, e) in exprs.iter().enumerate() {
                o[k] = e.eval(x);
            }
        }) as FieldFn);
    }
    let mut table: Vec<(usize, usize, Vec<Expr>)> = Vec::new();
    for b in &file.bracket {
        if b.i == 0 || b.j == 0 {
            return Err(LabError::InvalidParameter("bracket indices are 1-based".into()));
        }
        table.push((b.i - 1, b.j - 1, compile(&b.coeffs)?));
    }
    let closed: Option<BracketFn> = if table.is_empty() {
        None
    } else {
        let table = Arc::new(table);
        Some(Arc::new(move |i, j, x, o| {
            for (a, b, es) in table.iter() {
                let sign = if (*a, *b) == (i, j) {
                    1.0
                } else if (*b, *a) == (i, j) {
                    -1.0
                } else {
                    continue;
                };
                for (k, e) in es.iter().enumerate() {
                    o[k] = sign * e.eval(x);
                }
                return true;
            }
            false
        }))
    };
    let periodic = file.periodic.unwrap_or_else(|| vec![false; n]);
    let lower = file.lower.unwrap_or_else(|| periodic.iter().map(|&p| if p { 0.0 } else { -10.0 }).collect());
    let upper = file.upper.unwrap_or_else(|| periodic.iter().map(|&p| if p { TWO_PI } else { 10.0 }).collect());
    if lower.len() != n || upper.len() != n || periodic.len() != n {
        return Err(LabError::InvalidParameter("lower/upper/periodic must have ambient_dim entries".into()));
    }
    let frame = enumerate_frame(
        file.name.as_deref().unwrap_or("custom"),
        generators,
        file.step,
        lower.clone(),
        upper.clone(),
        periodic,
        closed,
    )?;
    frame.check_rank(&lower, &upper, 32, 11)?;
    Ok(frame)
}

/// The ε-weighted extended system X_1^ε, …, X_{2p−m}^ε.
#[derive(Clone, Debug)]
pub struct EpsFrame {
    pub base: Arc<Frame>,
    pub eps: f64,
    weights: Vec<f64>,
    source: Vec<usize>,
    degrees: Vec<usize>,
}

pub fn make_eps_frame(frame: Arc<Frame>, eps: f64) -> Result<EpsFrame> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(LabError::InvalidParameter(format!("eps must be a finite value ≥ 0, got {eps}")));
    }
    let (m, p) = (frame.m, frame.p());
    let mut weights = Vec::with_capacity(2 * p - m);
    let mut source = Vec::with_capacity(2 * p - m);
    let mut degrees = Vec::with_capacity(2 * p - m);
    for i in 0..p {
        let d = frame.degrees[i];
        weights.push(if i < m { 1.0 } else { eps.powi(d as i32 - 1) });
        source.push(i);
        degrees.push(1);
    }
    for i in m..p {
        weights.push(1.0);
        source.push(i);
        degrees.push(frame.degrees[i]);
    }
    Ok(EpsFrame { base: frame, eps, weights, source, degrees })
}

impl EpsFrame {
    pub fn new(frame: &Arc<Frame>, eps: f64) -> Result<Self> {
        make_eps_frame(frame.clone(), eps)
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn m(&self) -> usize {
        self.base.m
    }

    /// Number of degree-one fields (the ones defining d_ε).
    pub fn p(&self) -> usize {
        self.base.p()
    }

    /// Length 2p − m of the extended list.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Index into the base enumeration Y behind X_i^ε.
    pub fn source(&self, i: usize) -> usize {
        self.source[i]
    }

    /// True if X_i^ε vanishes identically (weighted copies at ε = 0).
    pub fn is_null(&self, i: usize) -> bool {
        self.weights[i] == 0.0
    }

    #[inline]
    pub fn eval(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let w = self.weights[i];
        if w == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        self.base.eval(self.source[i], x, out);
        if w != 1.0 {
            out.iter_mut().for_each(|v| *v *= w);
        }
    }

    pub fn eval_vec(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut o = vec![0.0; self.dim()];
        self.eval(i, x, &mut o);
        o
    }

    /// Velocity Σ c_i X_i^ε(x) over the first `c.len()` fields.
    pub fn velocity(&self, c: &[f64], x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &ci) in c.iter().enumerate() {
            if ci == 0.0 || self.weights[i] == 0.0 {
                continue;
            }
            self.eval(i, x, scratch);
            for k in 0..out.len() {
                out[k] += ci * scratch[k];
            }
        }
    }

    /// Time-one flow of the constant control `c`, by `substeps` classical
    /// fourth-order Runge–Kutta steps.
    pub fn flow(&self, c: &[f64], x: &[f64], substeps: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        flow_in_place(self, c, &mut y, substeps, 1.0);
        y
    }
}

/// Integrate ẏ = Σ c_i X_i^ε(y) over `[0, time]` in place.
pub fn flow_in_place(ef: &EpsFrame, c: &[f64], y: &mut [f64], substeps: usize, time: f64) {
    let n = y.len();
    let mut buf = [0.0f64; 48];
    let (k1, rest) = buf.split_at_mut(8);
    let (k2, rest) = rest.split_at_mut(8);
    let (k3, rest) = rest.split_at_mut(8);
    let (k4, rest) = rest.split_at_mut(8);
    let (tmp, scratch) = rest.split_at_mut(8);
    let (k1, k2, k3, k4, tmp, scratch) = (&mut k1[..n], &mut k2[..n], &mut k3[..n], &mut k4[..n], &mut tmp[..n], &mut scratch[..n]);
    let dt = time / substeps as f64;
    for _ in 0..substeps {
        ef.velocity(c, y, k1, scratch);
        for k in 0..n {
            tmp[k] = y[k] + 0.5 * dt * k1[k];
        }
        ef.velocity(c, tmp, k2, scratch);
        for k in 0..n {
            tmp[k] = y[k] + 0.5 * dt * k2[k];
        }
        ef.velocity(c, tmp, k3, scratch);
        for k in 0..n {
            tmp[k] = y[k] + dt * k3[k];
        }
        ef.velocity(c, tmp, k4, scratch);
        for k in 0..n {
            y[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
    }
}

/// (X_1^ε u, …, X_p^ε u) at a node by centered differences.
pub fn horizontal_gradient(ef: &EpsFrame, lat: &Lattice, u: &[f64], node: usize) -> Result<Vec<f64>> {
    let n = ef.dim();
    let mut x = [0.0; 8];
    lat.coord(node, &mut x[..n]);
    let mut partial = [0.0; 8];
    let mut known = [false; 8];
    let mut c = [0.0; 8];
    let mut out = vec![0.0; ef.p()];
    for (i, o) in out.iter_mut().enumerate() {
        ef.eval(i, &x[..n], &mut c[..n]);
        let mut acc = 0.0;
        for k in 0..n {
            if c[k] == 0.0 {
                continue;
            }
            if !known[k] {
                partial[k] = lat
                    .partial(u, node, k)
                    .ok_or_else(|| LabError::OutOfDomain(format!("gradient stencil leaves the lattice at node {node}")))?;
                known[k] = true;
            }
            acc += c[k] * partial[k];
        }
        *o = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h1() -> Arc<Frame> {
        Arc::new(build_builtin_frame(Builtin::Heisenberg1))
    }

    #[test]
    fn heisenberg_bracket_closed_form() {
        let f = h1();
        assert_eq!(f.bracket(0, 1, &[0.3, -0.7, 2.0]).unwrap(), vec![0.0, 0.0, 2.0]);
        let fd = f.bracket_fd(0, 1, &[0.3, -0.7, 2.0]);
        assert_abs_diff_eq!(fd[2], 2.0, epsilon = 1e-8);
        assert_eq!(f.bracket(1, 1, &[0.1, 0.2, 0.3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rototranslation_bracket_matches_differences() {
        let f = Arc::new(build_builtin_frame(Builtin::Rototranslation));
        let b0 = f.bracket(0, 1, &[0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(b0[1], -1.0, epsilon = 1e-15);
        let x = [0.2, -0.1, std::f64::consts::FRAC_PI_2];
        let b = f.bracket(0, 1, &x).unwrap();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                let c = f.bracket(i, j, &x).unwrap();
                let d = f.bracket_fd(i, j, &x);
                for k in 0..3 {
                    assert_abs_diff_eq!(c[k], d[k], epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn example32_enumeration_matches_builtin() {
        let b = build_builtin_frame(Builtin::Example32);
        let gens = b.spec.fields[..4].to_vec();
        let e = enumerate_frame("e32", gens, 3, b.lower.clone(), b.upper.clone(), b.periodic.clone(), None).unwrap();
        assert_eq!(e.degrees, b.degrees);
        assert_eq!(e.origins, b.origins);
        let x = [0.3, -0.2, 0.7, 0.1, 1.1];
        for i in 0..b.p() {
            let u = b.eval_vec(i, &x);
            let v = e.eval_vec(i, &x);
            for k in 0..5 {
                assert_abs_diff_eq!(u[k], v[k], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn eps_frame_weights() {
        let f = h1();
        let e1 = make_eps_frame(f.clone(), 1.0).unwrap();
        assert_eq!(e1.len(), 4);
        assert_eq!(e1.degrees(), &[1, 1, 1, 2]);
        let e5 = make_eps_frame(f.clone(), 0.5).unwrap();
        assert_eq!(e5.eval_vec(2, &[3.0, 1.0, 0.0]), vec![0.0, 0.0, 1.0]);
        let e0 = make_eps_frame(f.clone(), 0.0).unwrap();
        assert_eq!(e0.eval_vec(2, &[3.0, 1.0, 0.0]), vec![0.0; 3]);
        assert_eq!(e0.eval_vec(3, &[3.0, 1.0, 0.0]), vec![0.0, 0.0, 2.0]);
        assert!(make_eps_frame(f, -0.1).is_err());
    }

    #[test]
    fn builtin_names() {
        assert_eq!(Builtin::parse("euclidean(3)").unwrap(), Builtin::Euclidean(3));
        assert_eq!(Builtin::parse("euclidean2").unwrap(), Builtin::Euclidean(2));
        assert!(matches!(Builtin::parse("sphere"), Err(LabError::UnsupportedFrame(_))));
    }

    #[test]
    fn frame_file_roundtrip() {
        let text = r#"
name = "h1-file"
ambient_dim = 3
step = 2
generators = [["1", "0", "-x2"], ["0", "1", "x1"]]
"#;
        let f = frame_from_toml(text).unwrap();
        assert_eq!(f.p(), 3);
        let y3 = f.eval_vec(2, &[0.4, 0.1, -0.3]);
        assert_abs_diff_eq!(y3[2], 2.0, epsilon = 1e-8);
        let bad = "ambient_dim = 3\nstep = 2\ngenerators = [[\"1\", \"0\", \"-y\"]]\n";
        match frame_from_toml(bad) {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradient_of_vertical_coordinate() {
        let f = h1();
        let ef = make_eps_frame(f, 0.3).unwrap();
        let lat = Lattice::new(&[-1.0; 3], &[1.0; 3], &[21, 21, 21], &[false; 3]).unwrap();
        let u = lat.sample(|x| x[2]);
        let node = lat.index(&[14, 6, 10]);
        let x = lat.point(node);
        let g = horizontal_gradient(&ef, &lat, &u, node).unwrap();
        assert_abs_diff_eq!(g[0], -x[1], epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], x[0], epsilon = 1e-12);
        assert_abs_diff_eq!(g[2], 0.6, epsilon = 1e-12);
        assert!(horizontal_gradient(&ef, &lat, &u, 0).is_err());
    }
}
