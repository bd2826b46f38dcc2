use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} of {dim}); covariates may be collinear")]
    NotPositiveDefinite { pivot: usize, dim: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no convergence after {iterations} iterations (gradient sup-norm {gradient_norm:.3e})")]
    MaxIterationsExceeded { iterations: usize, gradient_norm: f64 },
    #[error("Hessian is singular or not negative definite")]
    HessianSingular,
    #[error("propensity fit separates treated and control units")]
    Separation,
    #[error("treatment indicator has a single class")]
    AllTreatedOrAllControl,
    #[error("inverse probability tilting objective is unbounded")]
    ObjectiveUnbounded,
    #[error("subsample has {selected} rows, at least {required} are required")]
    InsufficientSubsample { selected: usize, required: usize },
    #[error("propensity score {value} for control unit {index} is too close to one")]
    ExtremePropensity { index: usize, value: f64 },
    #[error("nuisance fit carries no linearization")]
    MissingLinearization,
    #[error("{failed} of {draws} bootstrap draws were not finite")]
    NonFiniteDraw { failed: usize, draws: usize },
    #[error("cell (d={d}, post={t}) is empty")]
    EmptyCell { d: u8, t: u8 },
    #[error("simulated treatment indicator was degenerate after {attempts} attempts")]
    DegenerateTreatment { attempts: u32 },
    #[error("{failed} of {reps} replications failed for {estimator}")]
    TooManyFailures { estimator: String, failed: usize, reps: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error at line {line}, column '{column}': {message}")]
    Parse { line: usize, column: String, message: String },
    #[error("duplicate id '{id}' at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::DuplicateId { .. }
            | Error::MissingColumn(_)
            | Error::Io(_)
            | Error::EmptyCell { .. }
            | Error::AllTreatedOrAllControl
            | Error::DimensionMismatch(_)
            | Error::InsufficientSubsample { .. } => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
