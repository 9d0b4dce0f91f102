use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("density is not integrable: {0}")]
    NonIntegrable(String),

    #[error("potential is not convex on the grid: {0}")]
    NotLogConcave(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("transport problem too large ({n} x {m} > {limit}); subsample the inputs")]
    ScaleExceeded { n: usize, m: usize, limit: usize },

    #[error("transport solver failed: {0}")]
    Solver(String),

    #[error("value {value} outside the kernel range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("shooting failed: {0}")]
    Shooting(String),

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("domain error in {term}: {detail}")]
    Domain { term: &'static str, detail: String },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
