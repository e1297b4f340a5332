//! Stochastic gradient Langevin dynamics.
//!
//! One step: w' = w + (eps/2) [ (N/B) grad log p(batch|w)
//!                              + prior_weight * grad log prior(w) ]
//!               + eta,  eta ~ N(0, eps I).
//!
//! The step size is constant and there is no Metropolis correction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::nn::{forward, grad_params, softmax, ParamVector};
use crate::variational::PriorDist;

use super::{Averaging, Ensemble};

/// Per-example log-likelihood family used by the update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    CategoricalCe,
    BernoulliCe,
    Gaussian { noise_variance: f64 },
}

/// Likelihood selector as it appears in config files; the Gaussian noise
/// variance lives in its own key so the section stays closed-world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    CategoricalCe,
    BernoulliCe,
    Gaussian,
}

fn default_n_samples() -> usize {
    5
}

fn default_noise_variance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldConfig {
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    pub burnin_epochs: usize,
    pub thin_epochs: usize,
    /// Multiplier on the log-prior gradient.
    pub prior_weight: f64,
    pub likelihood: LikelihoodKind,
    /// Noise variance for the Gaussian likelihood; ignored otherwise.
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    /// Dataset size N used in the (N/B) minibatch scaling.
    pub dataset_size: usize,
    pub seed: u64,
}

impl SgldConfig {
    pub fn likelihood_model(&self) -> Likelihood {
        match self.likelihood {
            LikelihoodKind::CategoricalCe => Likelihood::CategoricalCe,
            LikelihoodKind::BernoulliCe => Likelihood::BernoulliCe,
            LikelihoodKind::Gaussian => Likelihood::Gaussian {
                noise_variance: self.noise_variance,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "SGLD step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 || self.n_samples == 0 {
            return Err(Error::InvalidConfig(
                "batch size and sample count must be positive".to_string(),
            ));
        }
        if self.burnin_epochs + self.n_samples * self.thin_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "epoch budget {} cannot fit burn-in {} plus {} samples thinned by {}",
                self.epochs, self.burnin_epochs, self.n_samples, self.thin_epochs
            )));
        }
        if self.likelihood == LikelihoodKind::Gaussian && !(self.noise_variance > 0.0) {
            return Err(Error::InvalidConfig(
                "Gaussian likelihood noise variance must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Gradient of sum_i log p(y_i | x_i, w) over the batch rows.
fn log_lik_grad(
    params: &ParamVector,
    xs: &Matrix,
    ys: &Matrix,
    idx: &[usize],
    likelihood: Likelihood,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    let out_dim = params.arch().output_dim();
    for &i in idx {
        let x = xs.row(i);
        let z = forward(params, x)?;
        let upstream: Vec<f64> = match likelihood {
            Likelihood::CategoricalCe => {
                let y = ys.get(i, 0) as usize;
                if y >= out_dim {
                    return Err(Error::InvalidShape(format!(
                        "class label {y} out of range for {out_dim} outputs"
                    )));
                }
                let p = softmax(&z);
                (0..out_dim)
                    .map(|c| (if c == y { 1.0 } else { 0.0 }) - p[c])
                    .collect()
            }
            Likelihood::BernoulliCe => {
                if out_dim != 1 {
                    return Err(Error::InvalidConfig(
                        "Bernoulli likelihood needs a single-logit head".to_string(),
                    ));
                }
                let y = ys.get(i, 0);
                let p = crate::nn::sigmoid(z[0]);
                vec![y - p]
            }
            Likelihood::Gaussian { noise_variance } => {
                if ys.n_cols() != out_dim {
                    return Err(Error::InvalidShape(format!(
                        "regression targets have {} columns, network outputs {out_dim}",
                        ys.n_cols()
                    )));
                }
                (0..out_dim)
                    .map(|c| (ys.get(i, c) - z[c]) / noise_variance)
                    .collect()
            }
        };
        let g = grad_params(params, x, &upstream)?;
        for (gi, gk) in grad.iter_mut().zip(&g) {
            *gi += gk;
        }
    }
    Ok(grad)
}

/// One SGLD step with explicit injected noise (len = parameter count). The
/// noise is scaled by sqrt(eps) internally; passing zeros gives the
/// deterministic half-step.
pub fn sgld_step_with_noise(
    w: &mut ParamVector,
    xs: &Matrix,
    ys: &Matrix,
    batch_idx: &[usize],
    prior: &PriorDist,
    cfg: &SgldConfig,
    noise: &[f64],
) -> Result<()> {
    if noise.len() != w.len() {
        return Err(Error::InvalidShape(format!(
            "noise has {} entries, parameter vector has {}",
            noise.len(),
            w.len()
        )));
    }
    let ll_grad = log_lik_grad(w, xs, ys, batch_idx, cfg.likelihood_model())?;
    let prior_grad = prior.log_prob_grad(w)?;
    let scale = cfg.dataset_size as f64 / batch_idx.len() as f64;
    let half = cfg.step_size / 2.0;
    let noise_scale = cfg.step_size.sqrt();
    let values = w.values_mut();
    for i in 0..values.len() {
        values[i] +=
            half * (scale * ll_grad[i] + cfg.prior_weight * prior_grad[i]) + noise_scale * noise[i];
        if !values[i].is_finite() {
            return Err(Error::NumericalFailure(format!(
                "SGLD update produced a non-finite weight at coordinate {i}"
            )));
        }
    }
    Ok(())
}

/// One SGLD step with freshly drawn Gaussian noise.
pub fn sgld_step<R: Rng + ?Sized>(
    w: &mut ParamVector,
    xs: &Matrix,
    ys: &Matrix,
    batch_idx: &[usize],
    prior: &PriorDist,
    cfg: &SgldConfig,
    rng: &mut R,
) -> Result<()> {
    let noise: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
    sgld_step_with_noise(w, xs, ys, batch_idx, prior, cfg, &noise)
}

/// Runs SGLD from a prior draw and collects `n_samples` weights spaced
/// `thin_epochs` apart after `burnin_epochs`. Deterministic given the rng.
pub fn sgld_sample<R: Rng + ?Sized>(
    data: &Dataset,
    prior: &PriorDist,
    cfg: &SgldConfig,
    averaging: Averaging,
    rng: &mut R,
) -> Result<Ensemble> {
    cfg.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::InvalidConfig("labeled data is empty".to_string()));
    }
    let mut w = prior.sample(rng);
    let mut members = Vec::with_capacity(cfg.n_samples);
    for epoch in 1..=cfg.epochs {
        let order = crate::data::shuffled_indices(data.n_rows(), rng);
        for batch_idx in order.chunks(cfg.batch_size) {
            sgld_step(&mut w, &data.xs, &data.ys, batch_idx, prior, cfg, rng)?;
        }
        if epoch > cfg.burnin_epochs {
            let since = epoch - cfg.burnin_epochs;
            if cfg.thin_epochs > 0
                && since % cfg.thin_epochs == 0
                && members.len() < cfg.n_samples
            {
                members.push(w.clone());
            }
        }
    }
    // thin_epochs = 0 means "take the final state" repeatedly is meaningless;
    // collect the final weights for any remaining slots.
    while members.len() < cfg.n_samples {
        members.push(w.clone());
    }
    Ensemble::new(members, averaging)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelKind, TaskMeta};
    use crate::nn::{Activation, ArchSpec, OutputHead};
    use crate::variational::IsotropicPrior;

    fn toy_arch() -> ArchSpec {
        ArchSpec::new(vec![1, 1], Activation::Relu, OutputHead::Identity).unwrap()
    }

    fn toy_prior(arch: &ArchSpec) -> PriorDist {
        PriorDist::Isotropic {
            prior: IsotropicPrior::new(1.0).unwrap(),
            arch: arch.clone(),
        }
    }

    fn toy_cfg(step_size: f64) -> SgldConfig {
        SgldConfig {
            step_size,
            epochs: 1,
            batch_size: 2,
            n_samples: 1,
            burnin_epochs: 0,
            thin_epochs: 1,
            prior_weight: 1.0,
            likelihood: LikelihoodKind::Gaussian,
            noise_variance: 1.0,
            dataset_size: 2,
            seed: 0,
        }
    }

    #[test]
    fn zero_gradients_and_zero_noise_leave_w_unchanged() {
        let arch = toy_arch();
        let mut w = ParamVector::zeros(&arch);
        // x = 0 and y = 0: forward = 0, residual 0; prior grad at w = 0 is 0.
        let xs = Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let ys = Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let prior = toy_prior(&arch);
        let cfg = toy_cfg(0.1);
        sgld_step_with_noise(&mut w, &xs, &ys, &[0, 1], &prior, &cfg, &[0.0, 0.0]).unwrap();
        assert!(w.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_free_steps_ascend_the_log_joint_on_a_quadratic() {
        // Gaussian likelihood + isotropic prior is a concave log-joint;
        // gradient steps with the noise zeroed must not decrease it.
        let arch = toy_arch();
        let mut w = ParamVector::from_values(&arch, vec![2.0, -1.5]).unwrap();
        let xs = Matrix::from_rows(&[vec![1.0], vec![0.5], vec![-0.7]]).unwrap();
        let ys = Matrix::from_rows(&[vec![0.4], vec![0.1], vec![-0.3]]).unwrap();
        let prior = toy_prior(&arch);
        let mut cfg = toy_cfg(0.05);
        cfg.dataset_size = 3;
        let log_joint = |w: &ParamVector| -> f64 {
            let mut lj = 0.0;
            for i in 0..3 {
                let z = forward(w, xs.row(i)).unwrap()[0];
                lj -= 0.5 * (ys.get(i, 0) - z).powi(2);
            }
            lj - 0.5 * w.values().iter().map(|v| v * v).sum::<f64>()
        };
        let mut prev = log_joint(&w);
        let zero = vec![0.0; 2];
        for _ in 0..50 {
            sgld_step_with_noise(&mut w, &xs, &ys, &[0, 1, 2], &prior, &cfg, &zero).unwrap();
            let cur = log_joint(&w);
            assert!(cur >= prev - 1e-12, "log joint decreased: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn single_sample_run_yields_one_member() {
        let arch = toy_arch();
        let prior = toy_prior(&arch);
        let xs = Matrix::from_rows(&[vec![0.3], vec![-0.2]]).unwrap();
        let ys = Matrix::from_rows(&[vec![0.1], vec![0.0]]).unwrap();
        let data = Dataset {
            xs,
            ys,
            masks: None,
            region_flags: None,
            label_kind: LabelKind::Regression,
            meta: TaskMeta::Pendulum {
                config: crate::data::PendulumConfig::default(),
            },
            split: "train".to_string(),
            standardizer: None,
        };
        let mut cfg = toy_cfg(0.01);
        cfg.epochs = 3;
        cfg.burnin_epochs = 1;
        let mut rng = crate::rng::derive_stream(1, "sgld");
        let ens = sgld_sample(&data, &prior, &cfg, Averaging::Logits, &mut rng).unwrap();
        assert_eq!(ens.members().len(), 1);
    }

    #[test]
    fn invalid_budget_is_rejected() {
        let mut cfg = toy_cfg(0.01);
        cfg.epochs = 3;
        cfg.burnin_epochs = 2;
        cfg.n_samples = 5;
        cfg.thin_epochs = 1;
        assert!(cfg.validate().is_err());
    }
}
