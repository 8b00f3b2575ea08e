use thiserror::Error;

/// Errors surfaced by the library. Variants are coarse on purpose: callers
/// mostly need the category and a human-readable detail string.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("fixed point did not converge: {0}")]
    NoConvergence(String),
    #[error("iterate left the positive orthant: {0}")]
    NonPositive(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("dense limit exceeded: kp = {kp} > {limit}")]
    DenseLimitExceeded { kp: usize, limit: usize },
    #[error("near-critical regime: {0}")]
    CriticalRegime(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("degenerate shift: coefficient {0} below tolerance")]
    DegenerateShift(f64),
    #[error("covariance not positive semidefinite: {0}")]
    NonPsd(String),
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("schema error in column `{column}`: {detail}")]
    Schema { column: String, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category tag used by the CLI for its one-line error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension",
            Error::ZeroVariance(_) => "zero-variance",
            Error::SingularSystem(_) => "singular-system",
            Error::SingularMatrix(_) => "singular-matrix",
            Error::NoConvergence(_) => "no-convergence",
            Error::NonPositive(_) => "non-positive",
            Error::ModelMismatch(_) => "model-mismatch",
            Error::DenseLimitExceeded { .. } => "dense-limit",
            Error::CriticalRegime(_) => "critical-regime",
            Error::InsufficientSamples(_) => "insufficient-samples",
            Error::DegenerateShift(_) => "degenerate-shift",
            Error::NonPsd(_) => "non-psd",
            Error::BadSpec(_) => "bad-spec",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
