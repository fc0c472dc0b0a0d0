//! Bayesian function-on-scalar regression emulator for ensembles of
//! deterministic simulators.
//!
//! Responses `y_ij(t)` (scenario `i`, simulator `j`) are modelled as
//! `Θ B_Z z_i + ε_ij` with the random-effect scores centred on the
//! fixed effects, `B_{Z,i} ~ N(B_W w_i, σ²_Z P⁻¹)`, and AR(1) errors.
//! The crate provides the spline basis, the error covariance kernel,
//! the joint density, a Gibbs-within-Metropolis sampler, convergence
//! diagnostics, posterior functionals (curve bands, ROPE probabilities,
//! temporal kriging) and predictive scores.

pub mod cli;
pub mod cov;
pub mod design;
pub mod diagnostics;
pub mod eb;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod scoring;
pub mod spline;

pub use cov::{Ar1Factor, Ar1Spec, CovMode, SuppVariant};
pub use error::{FosrError, Result};
pub use model::{EnsembleDataset, FosrModel, HyperParams, ParamState};
pub use sampler::{DrawStore, SamplerConfig};
pub use spline::BasisSystem;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
