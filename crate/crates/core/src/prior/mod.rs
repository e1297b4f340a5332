//! Learning the informative prior from unlabeled data and a domain loss:
//! a variational route (low-rank or diagonal Gaussian, reparameterized
//! gradients, Adam) and a MultiSWAG route (per-component SGD trajectories
//! with snapshot moments).

mod swag_route;
mod variational;

pub use swag_route::{train_swag_prior, SwagPriorConfig};
pub use variational::{
    elbo_eval, train_prior, ElboEval, ElboNoise, EpochStats, PriorTrainConfig, StepStats,
    UnlabeledData, VariationalFamily, VariationalState, VariationalTrainer,
};
