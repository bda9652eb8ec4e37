use thiserror::Error;

/// Errors raised by manifold operations, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("point is infeasible (residual {residual:.3e} exceeds {tolerance:.1e})")]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("vector is not tangent (residual {residual:.3e} exceeds {tolerance:.1e})")]
    NotTangent { residual: f64, tolerance: f64 },

    #[error("retraction is singular: x + xi vanishes")]
    SingularRetraction,

    #[error("step of norm {norm} leaves the retraction domain (norm must be < 1)")]
    RetractionDomain { norm: f64 },

    #[error("matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("transported vector has vanishing norm")]
    DegenerateTransport,

    #[error("search direction is not a descent direction (slope {slope:e})")]
    NotDescent { slope: f64 },

    #[error("line search failed after {evaluations} evaluations (best sufficient-decrease step: {best_alpha:?})")]
    LineSearch {
        best_alpha: Option<f64>,
        evaluations: usize,
    },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("angle is undefined for a zero vector")]
    UndefinedAngle,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Config(_)
                | Error::UnknownPreset(_)
                | Error::Parse(_)
                | Error::Infeasible { .. }
        )
    }
}
