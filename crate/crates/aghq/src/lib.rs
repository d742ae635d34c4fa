//! Nested adaptive Gauss-Hermite quadrature with PCA grid truncation for
//! Bayesian inference in extended latent Gaussian models, together with the
//! reference sampler and comparison metrics used to validate it.

pub mod adapt;
pub mod diagnostics;
pub mod error;
pub mod ghq;
pub mod io;
pub mod laplace;
pub mod mcmc;
pub mod model;
pub mod models;
pub mod pipeline;
pub mod posterior;

pub use error::{Error, Result};
