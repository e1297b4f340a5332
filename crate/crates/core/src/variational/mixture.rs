use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, ArchSpec, ParamVector};
use crate::variational::LowRankGaussian;

/// Uniform mixture (1/K) sum_k N(mu_k, Sigma_k) of low-rank Gaussians over a
/// shared architecture. Component weights are fixed at 1/K.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    components: Vec<LowRankGaussian>,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<LowRankGaussian>) -> Result<Self> {
        let first = components.first().ok_or_else(|| {
            Error::InvalidConfig("mixture needs at least one component".to_string())
        })?;
        let arch = first.arch().clone();
        for (k, c) in components.iter().enumerate() {
            if c.arch() != &arch {
                return Err(Error::InvalidConfig(format!(
                    "mixture component {k} has a different architecture"
                )));
            }
        }
        Ok(Self { components })
    }

    #[inline]
    pub fn arch(&self) -> &ArchSpec {
        self.components[0].arch()
    }

    #[inline]
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    #[inline]
    pub fn components(&self) -> &[LowRankGaussian] {
        &self.components
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let k = rng.gen_range(0..self.components.len());
        self.components[k].sample(rng)
    }

    /// Log density of the uniform mixture at w.
    pub fn log_prob(&self, w: &[f64]) -> Result<f64> {
        let log_k = (self.components.len() as f64).ln();
        let lps = self
            .components
            .iter()
            .map(|c| c.log_prob(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&lps) - log_k)
    }

    /// Gradient of the mixture log density: the responsibility-weighted sum
    /// of component gradients, with responsibilities from a log-sum-exp over
    /// component log densities.
    pub fn log_prob_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let lps = self
            .components
            .iter()
            .map(|c| c.log_prob(w))
            .collect::<Result<Vec<_>>>()?;
        let lse = log_sum_exp(&lps);
        let mut grad = vec![0.0; w.len()];
        for (c, lp) in self.components.iter().zip(&lps) {
            let resp = (lp - lse).exp();
            if resp == 0.0 {
                continue;
            }
            let g = c.log_prob_grad(w)?;
            for (gi, ci) in grad.iter_mut().zip(&g) {
                *gi += resp * ci;
            }
        }
        Ok(grad)
    }
}
