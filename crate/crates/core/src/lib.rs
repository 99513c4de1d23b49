//! Kalman-filter optimizers for stochastic training.
//!
//! The central object is the surrogate `v_k = H_k P_{k-1}`: the projection of
//! the (never materialised) parameter covariance onto the current gradient.
//! [`optim::koala`] advances it with a rank-one recursion and uses it to form
//! the Kalman gain, which keeps the per-step cost linear in the parameter
//! count.
//!
//! Crate layout:
//!
//! - [`vector`], [`models`]: flat-vector numerics and small differentiable
//!   models with analytic gradients.
//! - [`optim`]: the surrogate-covariance step (symmetric and asymmetric
//!   reconstructions), the scalar-covariance baseline, SGD/Adam, learning-rate
//!   schedules and the online measurement-noise estimator.
//! - [`oracle`]: dense reference implementations used to check the above.
//! - [`data`]: synthetic datasets, CSV ingestion and seeded minibatching.
//! - [`harness`]: the experiment runner behind the `kalmanopt` binary.

pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod vector;

pub use error::{Error, Result};
pub use vector::{GradVector, ParamVector, SurrogateVector};
