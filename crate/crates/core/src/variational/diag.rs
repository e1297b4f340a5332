use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{ArchSpec, ParamVector};
use crate::variational::IsotropicPrior;

/// Mean-field Gaussian N(mu, diag(exp(2 log_std))) over flat weights.
/// The log-std parameterization keeps optimization unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    arch: ArchSpec,
    mu: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(arch: &ArchSpec, mu: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        let n = arch.param_count();
        if mu.len() != n || log_std.len() != n {
            return Err(Error::InvalidShape(format!(
                "mean/log-std have {}/{} entries, arch has {} parameters",
                mu.len(),
                log_std.len(),
                n
            )));
        }
        if !mu.iter().chain(log_std.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(
                "variational parameters contain non-finite entries".to_string(),
            ));
        }
        Ok(Self {
            arch: arch.clone(),
            mu,
            log_std,
        })
    }

    /// mu ~ N(0, s_init^2), std initialized at `init_std`.
    pub fn init_random<R: Rng + ?Sized>(
        arch: &ArchSpec,
        init_std: f64,
        s_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(init_std > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial std must be positive, got {init_std}"
            )));
        }
        let n = arch.param_count();
        let mu = (0..n)
            .map(|_| s_init * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_std = vec![init_std.ln(); n];
        Self::new(arch, mu, log_std)
    }

    #[inline]
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    pub fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    #[inline]
    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    #[inline]
    pub fn log_std_mut(&mut self) -> &mut [f64] {
        &mut self.log_std
    }

    /// mu + exp(log_std) .* eps.
    pub fn sample_with_noise(&self, eps: &[f64]) -> Result<ParamVector> {
        if eps.len() != self.dim() {
            return Err(Error::InvalidShape(format!(
                "noise has {} entries, dim is {}",
                eps.len(),
                self.dim()
            )));
        }
        let w = self
            .mu
            .iter()
            .zip(&self.log_std)
            .zip(eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect();
        ParamVector::from_values(&self.arch, w)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(&eps)
            .expect("noise shape is correct by construction")
    }

    /// Closed-form KL(q || N(0, sigma_p^2 I)).
    pub fn kl_to_isotropic(&self, prior: &IsotropicPrior) -> f64 {
        let vp = prior.variance();
        self.mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let var = (2.0 * ls).exp();
                0.5 * ((var + m * m) / vp - 1.0 + vp.ln() - 2.0 * ls)
            })
            .sum()
    }

    /// dKL/dmu = mu / sigma_p^2, dKL/dlog_std = var / sigma_p^2 - 1.
    pub fn kl_grad(&self, prior: &IsotropicPrior) -> (Vec<f64>, Vec<f64>) {
        let vp = prior.variance();
        let gm = self.mu.iter().map(|m| m / vp).collect();
        let gls = self
            .log_std
            .iter()
            .map(|ls| (2.0 * ls).exp() / vp - 1.0)
            .collect();
        (gm, gls)
    }

    /// Gradient of the log density: -(w - mu) / var.
    pub fn log_prob_grad(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.mu)
            .zip(&self.log_std)
            .map(|((wi, mi), ls)| -(wi - mi) / (2.0 * ls).exp())
            .collect()
    }
}
