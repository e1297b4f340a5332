//! Variational route: maximize
//!   (1/S) sum_s [ -sum_i phi(h_{w_s}, x_i)^2 / (2 tau^2) ] - beta KL(q || p)
//! over the variational parameters, with reparameterized weight samples
//! w_s = mu + V eps_r + sigma eps_n (or the diagonal analogue).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::losses::{BatchRef, DomainLoss};
use crate::nn::{ArchSpec, ParamVector};
use crate::opt::Adam;
use crate::variational::{DiagGaussian, IsotropicPrior, LowRankGaussian, PriorDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationalFamily {
    Lowrank,
    Diag,
}

fn default_mc_samples() -> usize {
    4
}

fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTrainConfig {
    pub tau: f64,
    /// KL scale.
    pub beta: f64,
    /// Covariance rank (ignored by the diagonal family).
    pub rank: usize,
    pub jitter_sigma: f64,
    /// sigma_p^2 of the isotropic reference prior.
    pub base_prior_variance: f64,
    /// Reparameterized samples per gradient step.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub family: VariationalFamily,
    /// Initialization scale: mu ~ N(0, init_scale^2).
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl PriorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.beta > 0.0 && self.base_prior_variance > 0.0) {
            return Err(Error::InvalidConfig(
                "tau, beta, and the base prior variance must be positive".to_string(),
            ));
        }
        if self.mc_samples == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "mc_samples and batch_size must be positive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<IsotropicPrior> {
        IsotropicPrior::new(self.base_prior_variance)
    }
}

/// The distribution being optimized.
#[derive(Debug, Clone, PartialEq)]
pub enum VariationalState {
    LowRank(LowRankGaussian),
    Diag(DiagGaussian),
}

impl VariationalState {
    pub fn init<R: Rng + ?Sized>(
        arch: &ArchSpec,
        cfg: &PriorTrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        match cfg.family {
            VariationalFamily::Lowrank => Ok(VariationalState::LowRank(
                LowRankGaussian::init_random(arch, cfg.rank, cfg.jitter_sigma, cfg.init_scale, rng)?,
            )),
            VariationalFamily::Diag => Ok(VariationalState::Diag(DiagGaussian::init_random(
                arch,
                cfg.jitter_sigma,
                cfg.init_scale,
                rng,
            )?)),
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        match self {
            VariationalState::LowRank(q) => q.arch(),
            VariationalState::Diag(q) => q.arch(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VariationalState::LowRank(q) => q.dim(),
            VariationalState::Diag(q) => q.dim(),
        }
    }

    /// Rank of the noise vector eps_r (0 for the diagonal family).
    fn noise_rank(&self) -> usize {
        match self {
            VariationalState::LowRank(q) => q.rank(),
            VariationalState::Diag(_) => 0,
        }
    }

    pub fn kl_to_isotropic(&self, prior: &IsotropicPrior) -> Result<f64> {
        match self {
            VariationalState::LowRank(q) => q.kl_to_isotropic(prior),
            VariationalState::Diag(q) => Ok(q.kl_to_isotropic(prior)),
        }
    }

    pub fn sample_with_noise(&self, eps_r: &[f64], eps_n: &[f64]) -> Result<ParamVector> {
        match self {
            VariationalState::LowRank(q) => q.sample_with_noise(eps_r, eps_n),
            VariationalState::Diag(q) => q.sample_with_noise(eps_n),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        match self {
            VariationalState::LowRank(q) => q.sample(rng),
            VariationalState::Diag(q) => q.sample(rng),
        }
    }

    pub fn into_prior_dist(self) -> PriorDist {
        match self {
            VariationalState::LowRank(q) => PriorDist::LowRank(q),
            VariationalState::Diag(q) => PriorDist::Diag(q),
        }
    }
}

/// Exogenous noise for S reparameterized samples; fixing it makes the MC
/// objective a deterministic function of the variational parameters.
#[derive(Debug, Clone)]
pub struct ElboNoise {
    pub eps_r: Vec<Vec<f64>>,
    pub eps_n: Vec<Vec<f64>>,
}

impl ElboNoise {
    pub fn draw<R: Rng + ?Sized>(q: &VariationalState, n_samples: usize, rng: &mut R) -> Self {
        let r = q.noise_rank();
        let n = q.dim();
        let mut eps_r = Vec::with_capacity(n_samples);
        let mut eps_n = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            eps_r.push((0..r).map(|_| rng.sample(StandardNormal)).collect());
            eps_n.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
        }
        Self { eps_r, eps_n }
    }
}

/// Objective value and ascent gradients at fixed noise.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub objective: f64,
    pub kl: f64,
    /// Mean unsquared phi across samples and batch entries.
    pub mean_phi: f64,
    pub grad_mu: Vec<f64>,
    /// Factor gradient (low-rank, column-major) or log-std gradient (diag).
    pub grad_cov: Vec<f64>,
}

/// Evaluates the MC objective and its reparameterized ascent gradient at
/// fixed noise. The phi-likelihood constant is dropped; the reported value
/// is -(1/S) sum_s sum_i phi^2/(2 tau^2) - beta KL.
pub fn elbo_eval(
    q: &VariationalState,
    batch: &BatchRef<'_>,
    spec: &dyn DomainLoss,
    cfg: &PriorTrainConfig,
    noise: &ElboNoise,
) -> Result<ElboEval> {
    cfg.validate()?;
    let prior = cfg.prior()?;
    let n = q.dim();
    let n_samples = noise.eps_n.len();
    if n_samples == 0 {
        return Err(Error::InvalidConfig("noise has zero samples".to_string()));
    }
    let inv_tau_sq = 1.0 / (cfg.tau * cfg.tau);
    let sample_scale = 1.0 / n_samples as f64;

    let kl = q.kl_to_isotropic(&prior)?;
    let (kl_grad_mu, kl_grad_cov) = match q {
        VariationalState::LowRank(g) => g.kl_grad(&prior)?,
        VariationalState::Diag(g) => {
            let (gm, gls) = g.kl_grad(&prior);
            (gm, gls)
        }
    };

    let mut neg_loss = 0.0;
    let mut phi_sum = 0.0;
    let mut phi_count = 0usize;
    let mut grad_mu = vec![0.0; n];
    let mut grad_cov = vec![0.0; kl_grad_cov.len()];
    for s in 0..n_samples {
        let w = q.sample_with_noise(&noise.eps_r[s], &noise.eps_n[s])?;
        let pairs = spec.eval_batch(&w, batch)?;
        // g_s = grad_w of sum_i phi_i^2 / (2 tau^2).
        let mut g_s = vec![0.0; n];
        for (phi, grad) in &pairs {
            neg_loss -= sample_scale * phi * phi * inv_tau_sq / 2.0;
            phi_sum += phi;
            phi_count += 1;
            let coeff = phi * inv_tau_sq;
            for (gi, gk) in g_s.iter_mut().zip(grad) {
                *gi += coeff * gk;
            }
        }
        match q {
            VariationalState::LowRank(g) => {
                for i in 0..n {
                    grad_mu[i] -= sample_scale * g_s[i];
                }
                for j in 0..g.rank() {
                    let e = noise.eps_r[s][j];
                    let col = &mut grad_cov[j * n..(j + 1) * n];
                    for i in 0..n {
                        col[i] -= sample_scale * e * g_s[i];
                    }
                }
            }
            VariationalState::Diag(g) => {
                let mu = g.mean();
                for i in 0..n {
                    grad_mu[i] -= sample_scale * g_s[i];
                    // dw_i/d log_std_i = std_i * eps_i = w_i - mu_i.
                    let dev = w.values()[i] - mu[i];
                    grad_cov[i] -= sample_scale * g_s[i] * dev;
                }
            }
        }
    }
    for i in 0..n {
        grad_mu[i] -= cfg.beta * kl_grad_mu[i];
    }
    for (gc, kg) in grad_cov.iter_mut().zip(&kl_grad_cov) {
        *gc -= cfg.beta * kg;
    }
    let objective = neg_loss - cfg.beta * kl;
    if !objective.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "non-finite objective (phi term {neg_loss}, kl {kl})"
        )));
    }
    Ok(ElboEval {
        objective,
        kl,
        mean_phi: phi_sum / phi_count.max(1) as f64,
        grad_mu,
        grad_cov,
    })
}

/// Statistics of one gradient step, evaluated before the step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub objective: f64,
    pub kl: f64,
    pub mean_phi: f64,
}

/// Owns the variational state and the Adam state across steps.
pub struct VariationalTrainer {
    q: VariationalState,
    cfg: PriorTrainConfig,
    opt: Adam,
}

impl VariationalTrainer {
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchSpec,
        cfg: &PriorTrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let q = VariationalState::init(arch, cfg, rng)?;
        Self::from_state(q, cfg)
    }

    pub fn from_state(q: VariationalState, cfg: &PriorTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let psi_dim = match &q {
            VariationalState::LowRank(g) => g.dim() * (1 + g.rank()),
            VariationalState::Diag(g) => 2 * g.dim(),
        };
        Ok(Self {
            q,
            cfg: cfg.clone(),
            opt: Adam::new(cfg.learning_rate, psi_dim),
        })
    }

    pub fn q(&self) -> &VariationalState {
        &self.q
    }

    pub fn into_q(self) -> VariationalState {
        self.q
    }

    /// Draws S samples, takes one Adam ascent step on the variational
    /// parameters, and returns the pre-step objective estimate.
    pub fn elbo_step<R: Rng + ?Sized>(
        &mut self,
        batch: &BatchRef<'_>,
        spec: &dyn DomainLoss,
        rng: &mut R,
    ) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::DegenerateBatch("empty batch".to_string()));
        }
        let noise = ElboNoise::draw(&self.q, self.cfg.mc_samples, rng);
        let eval = elbo_eval(&self.q, batch, spec, &self.cfg, &noise)?;
        // Adam descends, so feed the negated ascent gradient.
        let n = self.q.dim();
        let mut flat_grad = Vec::with_capacity(eval.grad_mu.len() + eval.grad_cov.len());
        flat_grad.extend(eval.grad_mu.iter().map(|g| -g));
        flat_grad.extend(eval.grad_cov.iter().map(|g| -g));
        let mut psi = match &self.q {
            VariationalState::LowRank(g) => {
                let mut v = g.mean().to_vec();
                v.extend_from_slice(g.factors());
                v
            }
            VariationalState::Diag(g) => {
                let mut v = g.mean().to_vec();
                v.extend_from_slice(g.log_std());
                v
            }
        };
        self.opt.step(&mut psi, &flat_grad);
        match &mut self.q {
            VariationalState::LowRank(g) => {
                g.mean_mut().copy_from_slice(&psi[..n]);
                g.factors_mut().copy_from_slice(&psi[n..]);
            }
            VariationalState::Diag(g) => {
                g.mean_mut().copy_from_slice(&psi[..n]);
                g.log_std_mut().copy_from_slice(&psi[n..]);
            }
        }
        Ok(StepStats {
            objective: eval.objective,
            kl: eval.kl,
            mean_phi: eval.mean_phi,
        })
    }
}

/// Unlabeled inputs plus the per-row side data the losses may need.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledData<'a> {
    pub xs: &'a Matrix,
    pub masks: Option<&'a [Vec<usize>]>,
    pub groups: Option<&'a [bool]>,
}

impl<'a> UnlabeledData<'a> {
    pub fn plain(xs: &'a Matrix) -> Self {
        Self {
            xs,
            masks: None,
            groups: None,
        }
    }

    pub fn batch(&self, idx: &'a [usize]) -> BatchRef<'a> {
        BatchRef::full(self.xs)
            .with_idx(idx)
            .with_masks(self.masks)
            .with_groups(self.groups)
    }

    pub fn full_batch(&self) -> BatchRef<'a> {
        BatchRef::full(self.xs)
            .with_masks(self.masks)
            .with_groups(self.groups)
    }
}

/// Per-epoch training curve entry.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub objective: f64,
    pub kl: f64,
    pub mean_phi: f64,
}

/// Full training loop over shuffled (or group-stratified) minibatches.
/// Returns the final state and the per-epoch mean statistics. Batches that
/// cannot support the loss (a fairness group missing) are skipped.
pub fn train_prior<R: Rng + ?Sized>(
    arch: &ArchSpec,
    data: &UnlabeledData<'_>,
    spec: &dyn DomainLoss,
    cfg: &PriorTrainConfig,
    rng: &mut R,
) -> Result<(VariationalState, Vec<EpochStats>)> {
    if data.xs.n_rows() == 0 {
        return Err(Error::InvalidConfig("unlabeled data is empty".to_string()));
    }
    let mut trainer = VariationalTrainer::new(arch, cfg, rng)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = match data.groups {
            Some(groups) => crate::data::stratified_indices(groups, rng),
            None => crate::data::shuffled_indices(data.xs.n_rows(), rng),
        };
        let mut sums = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.batch(idx);
            match trainer.elbo_step(&batch, spec, rng) {
                Ok(stats) => {
                    sums.0 += stats.objective;
                    sums.1 += stats.kl;
                    sums.2 += stats.mean_phi;
                    n_batches += 1;
                }
                Err(Error::DegenerateBatch(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let denom = n_batches.max(1) as f64;
        curve.push(EpochStats {
            epoch,
            objective: sums.0 / denom,
            kl: sums.1 / denom,
            mean_phi: sums.2 / denom,
        });
    }
    Ok((trainer.into_q(), curve))
}
