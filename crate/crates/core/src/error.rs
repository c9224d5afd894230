use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not column-stochastic (max column-sum deviation {max_deviation:.3e}, min entry {min_entry:.3e})")]
    NotStochastic { max_deviation: f64, min_entry: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("rank deficient: effective rank {effective_rank} < k = {k}")]
    RankDeficient { effective_rank: usize, k: usize },

    #[error("no feasible factorization: best residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("k = {k} exceeds the exhaustive permutation limit of {max}")]
    TooManyActions { k: usize, max: usize },

    #[error("edge ({parent}, {child}) violates the separation certificate: matched distance {distance:.3e} >= threshold {threshold:.3e}")]
    MarginViolation {
        parent: usize,
        child: usize,
        distance: f64,
        threshold: f64,
    },

    #[error("zero model density at sample {index} (o = {o}, e = {e})")]
    ZeroDensity { index: usize, o: usize, e: usize },

    #[error("objective diverged at step {step}")]
    Divergence { step: usize },

    #[error("kernel {kernel} cannot embed {what}")]
    IncompatibleKernel { kernel: String, what: String },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
