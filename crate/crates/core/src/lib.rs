//! Bayesian multi-task regression with a bivariate conditional autoregressive
//! (CAR) error model and a group-lasso scale-mixture prior.
//!
//! Inference is available through a Gibbs sampler ([`gibbs`]) and a
//! mean-field variational Bayes solver ([`vb`]). Posterior summaries feed the
//! Bayesian FDR selection rule in [`selection`], and [`tuning`] provides the
//! ridge initializer, the moment estimator for `λ²` and WAIC.

pub mod checks;
pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod selection;
pub mod tuning;
pub mod vb;

pub use error::{Error, ErrorKind, Result};
pub use model::{
    default_neighborhood, log_joint, simulate_dataset, CrossProducts, Dataset, Hyperparameters,
    ModelState, SpatialStructure,
};
