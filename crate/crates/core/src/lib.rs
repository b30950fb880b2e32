//! Simultaneous spatio-temporal quantile regression with monotone B-spline
//! curves.
//!
//! The conditional quantile of a response at time `x` and location `z` is
//! modelled as
//!
//! ```text
//! Q(tau | x, z) = x * xi1(tau, z) + (1 - x) * xi2(tau, z)
//! ```
//!
//! where `xi1(., z)` and `xi2(., z)` are monotone bijections of `[0, 1]`
//! expanded in a clamped B-spline basis in `tau`. Their coefficients vary
//! smoothly in space through a tensor-product spline basis, and each
//! coefficient sequence is parameterised by its spacings, which live on a
//! unit simplex. All variables are assumed to be scaled to `[0, 1]`.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and
//! multi-threaded drivers live in the companion `sstqr` crate.
//!
//! Layout:
//! - [`basis`]: clamped equidistant B-spline bases and curve evaluation.
//! - [`field`]: simplex blocks and the coefficient field.
//! - [`model`]: quantile evaluation, inverse solve, density and likelihood.
//! - [`likelihood`]: cached per-site log-likelihood for block updates.
//! - [`sampler`]: block Metropolis-Hastings.
//! - [`optimizer`]: greedy coordinate search on simplexes and AIC scans.
//! - [`simulation`]: synthetic truth, data generation and MSE metrics.

#![cfg_attr(not(test), no_std)]
// negated float comparisons are deliberate: NaN takes the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod basis;
pub mod dataset;
pub mod error;
pub mod field;
pub mod likelihood;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod sampler;
pub mod simulation;
pub mod sum;

pub use basis::BasisSpec;
pub use dataset::{Dataset, Site};
pub use error::{Error, Result};
pub use field::{BlockId, CoefficientField, Curve, SimplexBlock};
pub use model::{QuantileModel, TransformSpec, UnitScale};
pub use objective::BlockObjective;
pub use optimizer::OptimConfig;
pub use sampler::{McmcConfig, PosteriorSamples};
pub use simulation::SimConfig;

/// Deterministic random stream used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeds a [`Rng`] from a 64-bit seed and a stream index.
pub fn rng_from_seed(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
