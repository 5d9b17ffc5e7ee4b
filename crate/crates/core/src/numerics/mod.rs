//! Special functions, small dense linear algebra and seedable random streams.

mod linalg;
mod rng;
mod special;

pub use linalg::{cholesky_logdet_solve, Cholesky, DenseMatrix};
pub use rng::{stream_id, DrawKind, RandomSource};
pub use special::{digamma, lgamma, log_mv_beta, raw, trigamma};
