use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor is not recorded on this tape")]
    DetachedTensor,

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("no width reaches {target} parameters within tolerance (closest: {closest})")]
    Infeasible { target: usize, closest: usize },

    #[error("step limit of {max_steps} exceeded at t = {t}")]
    StepLimitExceeded { t: f64, max_steps: usize },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("CFL violation: {0}")]
    CflViolation(String),

    #[error("dry state at t = {t}: minimum depth {min_depth}")]
    DryState { t: f64, min_depth: f64 },

    #[error("window of {window} frames (+{horizon} horizon) does not fit {available} frames")]
    WindowTooLong {
        window: usize,
        horizon: usize,
        available: usize,
    },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("target has zero variance")]
    ZeroVariance,

    #[error("point set is empty")]
    EmptySet,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("unknown activation: {0}")]
    UnknownActivation(String),

    #[error("no closed-form antiderivative for activation {0}")]
    NoAntiderivative(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
