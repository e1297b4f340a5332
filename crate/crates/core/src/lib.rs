//! Learning domain-knowledge-informed priors for Bayesian neural networks.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`data`] generates task datasets (double pendulum, decoy images,
//!    synthetic fairness and clinical tables) and defines the on-disk
//!    container format.
//! 2. [`losses`] defines domain-knowledge loss functions phi(h, x) >= 0 with
//!    exact parameter gradients.
//! 3. [`prior`] learns an informative weight-space prior from unlabeled data
//!    and a phi loss, either variationally (low-rank or diagonal Gaussian)
//!    or as a mixture of SWAG Gaussians from SGD trajectories.
//! 4. [`posterior`] samples downstream posteriors with SGLD (optionally per
//!    mixture component), builds ensembles, and trains the frequentist
//!    regularized baseline.
//! 5. [`transfer`] moves a learned prior to a new architecture by matching
//!    function-space samples (moments, kernel MMD, or SWAG regression).
//! 6. [`metrics`] computes the evaluation metrics and Pareto frontiers.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod opt;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod transfer;
pub mod variational;

pub use error::{Error, Result};
