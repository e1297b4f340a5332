//! Weight-space distributions: low-rank-plus-jitter Gaussians, diagonal
//! Gaussians, uniform mixtures of low-rank Gaussians, and the isotropic
//! reference prior. All densities and solves against the low-rank covariance
//! go through the Woodbury identity and the matrix determinant lemma, with
//! only an r x r Cholesky factorization.

mod diag;
mod lowrank;
mod mixture;

pub use diag::DiagGaussian;
pub use lowrank::{CovDiagonal, LowRankGaussian};
pub use mixture::GaussianMixturePrior;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{ArchSpec, ParamVector};

/// Isotropic Gaussian reference prior p(w) = N(0, variance * I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicPrior {
    variance: f64,
}

impl IsotropicPrior {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "isotropic prior variance must be positive, got {variance}"
            )));
        }
        Ok(Self { variance })
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn sample<R: Rng + ?Sized>(&self, arch: &ArchSpec, rng: &mut R) -> ParamVector {
        let std = self.variance.sqrt();
        let values = (0..arch.param_count())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ParamVector::from_values(arch, values).expect("isotropic sample is well-formed")
    }

    /// Gradient of the log density: -w / variance.
    pub fn log_prob_grad(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|&wi| -wi / self.variance).collect()
    }
}

/// Any weight-space prior the samplers can draw from and differentiate.
#[derive(Debug, Clone)]
pub enum PriorDist {
    LowRank(LowRankGaussian),
    Diag(DiagGaussian),
    Mixture(GaussianMixturePrior),
    Isotropic { prior: IsotropicPrior, arch: ArchSpec },
}

impl PriorDist {
    pub fn arch(&self) -> &ArchSpec {
        match self {
            PriorDist::LowRank(q) => q.arch(),
            PriorDist::Diag(q) => q.arch(),
            PriorDist::Mixture(q) => q.arch(),
            PriorDist::Isotropic { arch, .. } => arch,
        }
    }

    pub fn dim(&self) -> usize {
        self.arch().param_count()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        match self {
            PriorDist::LowRank(q) => q.sample(rng),
            PriorDist::Diag(q) => q.sample(rng),
            PriorDist::Mixture(q) => q.sample(rng),
            PriorDist::Isotropic { prior, arch } => prior.sample(arch, rng),
        }
    }

    /// Gradient of the log density at w, shaped like the parameter vector.
    pub fn log_prob_grad(&self, w: &ParamVector) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        match self {
            PriorDist::LowRank(q) => q.log_prob_grad(w.values()),
            PriorDist::Diag(q) => Ok(q.log_prob_grad(w.values())),
            PriorDist::Mixture(q) => q.log_prob_grad(w.values()),
            PriorDist::Isotropic { prior, .. } => Ok(prior.log_prob_grad(w.values())),
        }
    }

    fn check_dim(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::InvalidShape(format!(
                "weight vector has {} entries, prior is over {}",
                w.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputHead};

    #[test]
    fn isotropic_log_prob_grad_is_minus_w_at_unit_variance() {
        let p = IsotropicPrior::new(1.0).unwrap();
        let w = [0.5, -2.0, 3.25];
        assert_eq!(p.log_prob_grad(&w), vec![-0.5, 2.0, -3.25]);
    }

    #[test]
    fn isotropic_rejects_nonpositive_variance() {
        assert!(IsotropicPrior::new(0.0).is_err());
        assert!(IsotropicPrior::new(-1.0).is_err());
    }

    #[test]
    fn prior_dist_checks_dimensions() {
        let arch = ArchSpec::new(vec![2, 2], Activation::Relu, OutputHead::Identity).unwrap();
        let other = ArchSpec::new(vec![3, 3], Activation::Relu, OutputHead::Identity).unwrap();
        let prior = PriorDist::Isotropic {
            prior: IsotropicPrior::new(1.0).unwrap(),
            arch,
        };
        let w = ParamVector::zeros(&other);
        assert!(prior.log_prob_grad(&w).is_err());
    }
}
