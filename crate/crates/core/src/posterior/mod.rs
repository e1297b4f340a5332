//! Downstream Bayesian inference: SGLD posterior sampling against any prior,
//! SWAG moment collection, ensembles, and the frequentist regularized
//! baseline.

mod ensemble;
mod lagrangian;
mod sgld;
mod swag;

pub use ensemble::{ensemble_predict, Averaging, Ensemble};
pub use lagrangian::{lagrangian_train, LagrangianConfig};
pub use sgld::{sgld_sample, sgld_step, sgld_step_with_noise, Likelihood, LikelihoodKind, SgldConfig};
pub use swag::{swag_collect, swag_to_gaussian, SwagMoments, SWAG_VAR_FLOOR};
