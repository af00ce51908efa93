use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node ({0}, {1}) outside the extended grid")]
    NodeOutOfRange(i64, i64),

    #[error("adaptive quadrature did not reach tolerance on element ({ex}, {ez}) (estimate {estimate:.3e})")]
    Quadrature { ex: i64, ez: i64, estimate: f64 },

    #[error("singular pivot block {block} in banded factorization")]
    SingularBlock { block: usize },

    #[error("factorization of layer {layer} failed at omega = {omega}: {source}")]
    LayerFactorization {
        layer: usize,
        omega: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("too many layers: {layers} layers need at least {needed} rows, grid has {rows}")]
    TooManyLayers { layers: usize, rows: usize, needed: usize },

    #[error("invalid trace depth {0}")]
    InvalidDepth(i64),

    #[error("lapack routine {routine} returned info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("krylov breakdown after {basis} basis vectors")]
    Breakdown { basis: usize },

    #[error("krylov solver did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        iterations: f64,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("inner solve of layer {layer} failed: {source}")]
    Inner {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Model(String),

    #[error("artifact: {0}")]
    Artifact(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
