//! MultiSWAG route: K independent SGD descents on the squared-phi MAP
//! objective, each summarized by SWAG snapshot moments into one mixture
//! component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::DomainLoss;
use crate::nn::{ArchSpec, ParamVector};
use crate::opt::Sgd;
use crate::posterior::{swag_collect, swag_to_gaussian};
use crate::prior::UnlabeledData;
use crate::rng::derive_indexed_stream;
use crate::variational::GaussianMixturePrior;

fn default_warmup() -> usize {
    5
}

fn default_interval() -> usize {
    5
}

fn default_snapshots() -> usize {
    3
}

fn default_batch_size() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwagPriorConfig {
    /// Mixture components K.
    pub components: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_interval")]
    pub snapshot_interval_epochs: usize,
    #[serde(default = "default_snapshots")]
    pub snapshots_per_component: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
}

impl SwagPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidConfig("need at least one component".to_string()));
        }
        if self.snapshots_per_component < 2 {
            return Err(Error::InvalidConfig(format!(
                "SWAG needs >= 2 snapshots per component, got {}",
                self.snapshots_per_component
            )));
        }
        if self.snapshot_interval_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "snapshot interval and batch size must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Epochs each component trains for: warmup plus the snapshot schedule.
    pub fn epochs(&self) -> usize {
        self.warmup_epochs + self.snapshot_interval_epochs * self.snapshots_per_component
    }
}

/// Trains a K-component mixture prior. Each component descends
/// (N/B) sum_batch phi^2/(2 tau^2) + |w|^2/(2 sigma_p^2) by plain SGD from a
/// fresh seeded initialization and collects snapshots after warmup.
pub fn train_swag_prior(
    arch: &ArchSpec,
    data: &UnlabeledData<'_>,
    spec: &dyn DomainLoss,
    cfg: &SwagPriorConfig,
    tau: f64,
    base_prior_variance: f64,
) -> Result<GaussianMixturePrior> {
    cfg.validate()?;
    if !(tau > 0.0 && base_prior_variance > 0.0) {
        return Err(Error::InvalidConfig(
            "tau and the base prior variance must be positive".to_string(),
        ));
    }
    let n_rows = data.xs.n_rows();
    if n_rows == 0 {
        return Err(Error::InvalidConfig("unlabeled data is empty".to_string()));
    }
    let inv_tau_sq = 1.0 / (tau * tau);
    let opt = Sgd::new(cfg.learning_rate);
    let mut components = Vec::with_capacity(cfg.components);
    for k in 0..cfg.components {
        let mut rng = derive_indexed_stream(cfg.seed, "swag-prior/component", k as u64);
        let mut w = ParamVector::he_init(arch, &mut rng);
        let mut snapshots = Vec::with_capacity(cfg.snapshots_per_component);
        for epoch in 1..=cfg.epochs() {
            let order = match data.groups {
                Some(groups) => crate::data::stratified_indices(groups, &mut rng),
                None => crate::data::shuffled_indices(n_rows, &mut rng),
            };
            for idx in order.chunks(cfg.batch_size) {
                let batch = data.batch(idx);
                let pairs = match spec.eval_batch(&w, &batch) {
                    Ok(p) => p,
                    Err(Error::DegenerateBatch(_)) => continue,
                    Err(e) => return Err(e),
                };
                let scale = n_rows as f64 / idx.len() as f64;
                let mut grad: Vec<f64> = w
                    .values()
                    .iter()
                    .map(|&wi| wi / base_prior_variance)
                    .collect();
                for (phi, g) in &pairs {
                    let coeff = scale * phi * inv_tau_sq;
                    for (gi, gk) in grad.iter_mut().zip(g) {
                        *gi += coeff * gk;
                    }
                }
                opt.step(w.values_mut(), &grad);
                if !w.values().iter().all(|v| v.is_finite()) {
                    return Err(Error::NumericalFailure(format!(
                        "SWAG prior component {k} diverged at epoch {epoch}"
                    )));
                }
            }
            if epoch > cfg.warmup_epochs
                && (epoch - cfg.warmup_epochs) % cfg.snapshot_interval_epochs == 0
                && snapshots.len() < cfg.snapshots_per_component
            {
                snapshots.push(w.clone());
            }
        }
        let moments = swag_collect(&snapshots)?;
        components.push(swag_to_gaussian(&moments, arch)?);
    }
    GaussianMixturePrior::new(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use crate::losses::DomainLossSpec;
    use crate::nn::{Activation, OutputHead};
    use crate::posterior::SWAG_VAR_FLOOR;

    fn arch() -> ArchSpec {
        ArchSpec::new(vec![4, 3, 4], Activation::Relu, OutputHead::Identity).unwrap()
    }

    #[test]
    fn too_few_snapshots_is_invalid() {
        let cfg = SwagPriorConfig {
            components: 1,
            warmup_epochs: 0,
            snapshot_interval_epochs: 1,
            snapshots_per_component: 0,
            learning_rate: 0.01,
            batch_size: 4,
            seed: 0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constant_objective_collapses_component_variance_to_the_floor() {
        // Empty-mask background loss has zero gradient everywhere and a huge
        // prior variance makes the ridge term negligible: snapshots stay at
        // the initialization.
        let arch = ArchSpec::new(vec![4, 3, 2], Activation::Relu, OutputHead::SoftmaxLogits)
            .unwrap();
        let xs = Matrix::from_rows(&vec![vec![0.1, 0.2, 0.3, 0.4]; 8]).unwrap();
        let data = UnlabeledData::plain(&xs);
        let spec = DomainLossSpec::Background {
            background_mask: vec![],
            variant: Default::default(),
        };
        let cfg = SwagPriorConfig {
            components: 1,
            warmup_epochs: 1,
            snapshot_interval_epochs: 1,
            snapshots_per_component: 3,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 7,
        };
        let mixture = train_swag_prior(&arch, &data, &spec, &cfg, 1.0, 1e12).unwrap();
        let c = &mixture.components()[0];
        for i in 0..c.dim() {
            assert!(
                (c.diag_var(i) - SWAG_VAR_FLOOR).abs() < 1e-12,
                "coordinate {i} variance {}",
                c.diag_var(i)
            );
        }
    }

    #[test]
    fn component_count_matches_config() {
        let arch = arch();
        let xs = Matrix::from_rows(&[
            vec![0.1, 0.5, -0.2, 0.3],
            vec![-0.4, 0.0, 0.6, -0.1],
            vec![0.9, -0.7, 0.2, 0.8],
        ])
        .unwrap();
        let data = UnlabeledData::plain(&xs);
        let spec = DomainLossSpec::EnergyDamping {
            pendulum: crate::data::PendulumConfig::default(),
        };
        let cfg = SwagPriorConfig {
            components: 2,
            warmup_epochs: 1,
            snapshot_interval_epochs: 1,
            snapshots_per_component: 2,
            learning_rate: 1e-3,
            batch_size: 3,
            seed: 1,
        };
        let mixture = train_swag_prior(&arch, &data, &spec, &cfg, 0.5, 1.0).unwrap();
        assert_eq!(mixture.n_components(), 2);
    }

    #[test]
    fn rerunning_a_component_reproduces_it_bit_for_bit() {
        let arch = arch();
        let xs = Matrix::from_rows(&[
            vec![0.1, 0.5, -0.2, 0.3],
            vec![-0.4, 0.0, 0.6, -0.1],
        ])
        .unwrap();
        let data = UnlabeledData::plain(&xs);
        let spec = DomainLossSpec::EnergyDamping {
            pendulum: crate::data::PendulumConfig::default(),
        };
        let cfg = SwagPriorConfig {
            components: 2,
            warmup_epochs: 1,
            snapshot_interval_epochs: 1,
            snapshots_per_component: 2,
            learning_rate: 1e-3,
            batch_size: 2,
            seed: 3,
        };
        let a = train_swag_prior(&arch, &data, &spec, &cfg, 0.5, 1.0).unwrap();
        let b = train_swag_prior(&arch, &data, &spec, &cfg, 0.5, 1.0).unwrap();
        assert_eq!(a.components()[0], b.components()[0]);
        assert_eq!(a.components()[1], b.components()[1]);
    }
}
