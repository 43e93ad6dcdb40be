//! Random block coordinate descent iterative hard thresholding for
//! l0-regularized convex minimization, with an enumeration oracle that
//! classifies local minimizers.

pub mod analysis;
pub mod approx;
pub mod error;
pub mod instances;
pub mod objectives;
pub mod problem;
pub mod rng;
pub mod solvers;

pub use approx::{ApproxKind, ApproxSpec, Usage};
pub use error::{Error, Result};
pub use objectives::{LeastSquares, LogisticL2, SmoothOracle};
pub use problem::{l0_norm, support_of, BlockPartition, IterateState, L0Problem};
pub use rng::{derive_seed, SolverRng, RNG_ALGORITHM};
