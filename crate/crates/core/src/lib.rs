//! EGN: Gauss-Newton training with exactly solved Levenberg-Marquardt steps.
//!
//! The crate computes Levenberg-Marquardt directions for mini-batch
//! least-squares and cross-entropy problems by solving a `bc × bc` system
//! instead of the `d × d` normal equations, where `b` is the batch size,
//! `c` the number of model outputs and `d` the parameter count.
//!
//! Modules:
//! - [`nn`]: feed-forward networks with exact per-sample Jacobians.
//! - [`losses`]: MSE / softmax cross-entropy residuals, curvature blocks and gradients.
//! - [`solvers`]: EGN, Sherman-Morrison-Woodbury, QR, CG and dense reference directions.
//! - [`optim`]: the EGN training step (momentum, Armijo search, adaptive damping), SGD and Adam.
//! - [`lqr`]: data-driven LQR policy iteration and a Riccati oracle.
//! - [`data`]: CSV ingestion, preprocessing and synthetic generators.
//! - [`bench`]: experiment configs, training sweeps and timing studies.

pub mod bench;
pub mod data;
pub mod error;
mod linalg;
pub mod losses;
pub mod lqr;
pub mod nn;
pub mod optim;
pub mod solvers;

pub use error::{Error, Result};
