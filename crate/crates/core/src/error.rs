use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{func}: argument {value} outside the domain")]
    Domain { func: &'static str, value: f64 },

    #[error("matrix is not symmetric positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite leaf value {0}")]
    NonFiniteLeaf(f64),

    #[error("non-finite root value; skip this step")]
    NonFiniteRoot,

    #[error("primitive {primitive} takes {expected} operands, got {found}")]
    Arity {
        primitive: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid design: non-finite entry at row {row}, column {col}")]
    InvalidDesign { row: usize, col: usize },

    #[error("posterior mean of the noise variance is undefined for a_n = {0} <= 1")]
    UndefinedVarianceMean(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization produced no valid step")]
    NoValidStep,

    #[error("no valid candidate")]
    NoValidCandidate,

    #[error("split leaves an empty partition (n = {n}, test fraction = {fraction})")]
    EmptySplit { n: usize, fraction: f64 },

    #[error("dataset: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
