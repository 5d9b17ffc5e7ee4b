//! Symbolic regression by black-box variational inference over soft symbolic
//! trees.
//!
//! An ensemble of `K` expression trees is embedded in full binary skeletons of
//! depth `D`. The discrete labels of every skeleton node (expand or not, which
//! operator, which feature) receive a mean-field variational distribution whose
//! parameters are fitted by maximizing a Monte Carlo ELBO through a Binary
//! Concrete / Gumbel-Softmax relaxation. Regression coefficients and noise
//! variance are integrated out analytically under a Normal-Inverse-Gamma prior.
//! After training, hard ensembles are sampled, scored with posterior-mean
//! coefficients and ranked by in-sample RMSE.
//!
//! The numeric core is generic over the scalar type ([`Real`]); the training
//! and sampling layers are concrete in `f64` through the aliases below.

pub mod autodiff;
pub mod bench;
pub mod conjugate;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod sampler;
pub mod soft_relax;
pub mod sym_tree;
pub mod trainer;
pub mod tree_prior;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};

pub use error::{Error, Result};

/// Scalar field used by the numeric core.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Sum + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + Debug + Display + Sum + Default + Send + Sync + 'static
{
}

pub type Matrix = numerics::DenseMatrix<f64>;
pub type Matrix32 = numerics::DenseMatrix<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type Var = autodiff::Node<f64>;
pub type Tree = sym_tree::SymbolicTree;
pub type NigPrior = conjugate::NigPrior<f64>;
pub type NigPosterior = conjugate::NigPosterior<f64>;

pub use bench::{Dataset, GeneratorSpec, Model};
pub use pipeline::{RunConfig, RunOutcome};
pub use sampler::Candidate;
pub use soft_relax::{ParamLayout, TempSchedule, VariationalParams};
pub use sym_tree::{HardSkeleton, Operator, OperatorSet, SymbolicTree, Topology};
pub use trainer::{FitResult, TrainConfig};
pub use tree_prior::PriorConfig;
