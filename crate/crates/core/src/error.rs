use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("unsupported frame: {0}")]
    UnsupportedFrame(String),
    #[error("point outside domain: {0}")]
    OutOfDomain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("lattice too coarse: {0}")]
    ResolutionTooCoarse(String),
    #[error("exponential coordinates failed: {0}")]
    CoordinateFailure(String),
    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    StabilityError { dt: f64, bound: f64 },
    #[error("boundary absorbed {0:.2}% of the mass")]
    DomainTooSmall(f64),
    #[error("only {0} fit points (need 50)")]
    InsufficientData(usize),
    #[error("infimum {0:e} too small for a ratio")]
    DegenerateInfimum(f64),
    #[error("denominator {0:e} too small for a ratio")]
    DegenerateDenominator(f64),
    #[error("flow diverged at step {0}")]
    Diverged(usize),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("manifest incomplete: {0}")]
    ManifestIncomplete(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<LabError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn context(self, ctx: impl Into<String>) -> Self {
        LabError::Context { context: ctx.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
