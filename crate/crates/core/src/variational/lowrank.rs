use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{ArchSpec, ParamVector};
use crate::variational::IsotropicPrior;

/// Smallest allowed jitter scale sigma.
pub const MIN_JITTER_SIGMA: f64 = 1e-6;
/// Floor for per-coordinate diagonal variances (SWAG-style covariances).
pub const DIAG_VAR_FLOOR: f64 = 1e-8;

/// Diagonal part of a low-rank-plus-diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum CovDiagonal {
    /// sigma^2 * I with fixed jitter scale sigma.
    Jitter(f64),
    /// Per-coordinate variances (each >= [`DIAG_VAR_FLOOR`]).
    PerCoord(Vec<f64>),
}

/// Gaussian N(mu, V V^T + D) over flat network weights, where V has `rank`
/// columns and D is either sigma^2 I or a per-coordinate diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankGaussian {
    arch: ArchSpec,
    mu: Vec<f64>,
    /// Column-major factors, `rank` columns of length n.
    factors: Vec<f64>,
    rank: usize,
    diag: CovDiagonal,
}

impl LowRankGaussian {
    pub fn new(
        arch: &ArchSpec,
        mu: Vec<f64>,
        factors: Vec<f64>,
        rank: usize,
        jitter_sigma: f64,
    ) -> Result<Self> {
        if !(jitter_sigma >= MIN_JITTER_SIGMA && jitter_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "jitter sigma must be >= {MIN_JITTER_SIGMA}, got {jitter_sigma}"
            )));
        }
        Self::build(arch, mu, factors, rank, CovDiagonal::Jitter(jitter_sigma))
    }

    /// SWAG-style covariance with a per-coordinate diagonal.
    pub fn with_diag_vector(
        arch: &ArchSpec,
        mu: Vec<f64>,
        factors: Vec<f64>,
        rank: usize,
        diag_var: Vec<f64>,
    ) -> Result<Self> {
        if diag_var.len() != mu.len() {
            return Err(Error::InvalidShape(format!(
                "diagonal has {} entries, mean has {}",
                diag_var.len(),
                mu.len()
            )));
        }
        if diag_var.iter().any(|&d| !(d >= DIAG_VAR_FLOOR) || !d.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "per-coordinate variances must be >= {DIAG_VAR_FLOOR}"
            )));
        }
        Self::build(arch, mu, factors, rank, CovDiagonal::PerCoord(diag_var))
    }

    fn build(
        arch: &ArchSpec,
        mu: Vec<f64>,
        factors: Vec<f64>,
        rank: usize,
        diag: CovDiagonal,
    ) -> Result<Self> {
        let n = arch.param_count();
        if mu.len() != n {
            return Err(Error::InvalidShape(format!(
                "mean has {} entries, arch has {} parameters",
                mu.len(),
                n
            )));
        }
        if factors.len() != n * rank {
            return Err(Error::InvalidShape(format!(
                "factor matrix has {} entries, expected n*r = {}",
                factors.len(),
                n * rank
            )));
        }
        if !mu.iter().chain(factors.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(
                "variational parameters contain non-finite entries".to_string(),
            ));
        }
        Ok(Self {
            arch: arch.clone(),
            mu,
            factors,
            rank,
            diag,
        })
    }

    /// Random initialization: mu ~ N(0, s_init^2), factor entries
    /// ~ N(0, s_init^2 / r).
    pub fn init_random<R: Rng + ?Sized>(
        arch: &ArchSpec,
        rank: usize,
        jitter_sigma: f64,
        s_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = arch.param_count();
        let mu = (0..n)
            .map(|_| s_init * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fac_std = if rank > 0 {
            s_init / (rank as f64).sqrt()
        } else {
            0.0
        };
        let factors = (0..n * rank)
            .map(|_| fac_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(arch, mu, factors, rank, jitter_sigma)
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
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    pub fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    /// Column-major factors, `rank` columns of length `dim`.
    #[inline]
    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    #[inline]
    pub fn factors_mut(&mut self) -> &mut [f64] {
        &mut self.factors
    }

    #[inline]
    pub fn factor_column(&self, j: usize) -> &[f64] {
        &self.factors[j * self.dim()..(j + 1) * self.dim()]
    }

    #[inline]
    pub fn diagonal(&self) -> &CovDiagonal {
        &self.diag
    }

    /// Variance contributed by the diagonal term at coordinate `i`.
    #[inline]
    pub fn diag_var(&self, i: usize) -> f64 {
        match &self.diag {
            CovDiagonal::Jitter(s) => s * s,
            CovDiagonal::PerCoord(d) => d[i],
        }
    }

    /// mu + V eps_r + sqrt(D) eps_n; exactly linear in the noise arguments.
    pub fn sample_with_noise(&self, eps_r: &[f64], eps_n: &[f64]) -> Result<ParamVector> {
        let n = self.dim();
        if eps_r.len() != self.rank {
            return Err(Error::InvalidShape(format!(
                "rank noise has {} entries, rank is {}",
                eps_r.len(),
                self.rank
            )));
        }
        if eps_n.len() != n {
            return Err(Error::InvalidShape(format!(
                "jitter noise has {} entries, dim is {}",
                eps_n.len(),
                n
            )));
        }
        let mut w = self.mu.clone();
        for (j, &e) in eps_r.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            for (wi, vi) in w.iter_mut().zip(self.factor_column(j)) {
                *wi += e * vi;
            }
        }
        for (i, (wi, &en)) in w.iter_mut().zip(eps_n).enumerate() {
            *wi += self.diag_var(i).sqrt() * en;
        }
        ParamVector::from_values(&self.arch, w)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let eps_r: Vec<f64> = (0..self.rank).map(|_| rng.sample(StandardNormal)).collect();
        let eps_n: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(&eps_r, &eps_n)
            .expect("noise shapes are correct by construction")
    }

    /// Cholesky factor of the r x r core M = I + V^T D^-1 V.
    fn core_cholesky(&self) -> Result<Option<Cholesky<f64, nalgebra::Dyn>>> {
        if self.rank == 0 {
            return Ok(None);
        }
        let n = self.dim();
        let r = self.rank;
        let mut m = DMatrix::<f64>::identity(r, r);
        for a in 0..r {
            let col_a = self.factor_column(a);
            for b in a..r {
                let col_b = self.factor_column(b);
                let mut acc = 0.0;
                for i in 0..n {
                    acc += col_a[i] * col_b[i] / self.diag_var(i);
                }
                m[(a, b)] += acc;
                if a != b {
                    m[(b, a)] += acc;
                }
            }
        }
        match Cholesky::new(m) {
            Some(chol) => Ok(Some(chol)),
            None => Err(Error::NumericalFailure(
                "Cholesky of the r x r Woodbury core failed".to_string(),
            )),
        }
    }

    /// Solves Sigma y = x via the Woodbury identity:
    /// y = D^-1 x - D^-1 V (I + V^T D^-1 V)^-1 V^T D^-1 x.
    pub fn woodbury_solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let chol = self.core_cholesky()?;
        Ok(self.woodbury_solve_with(&chol, x))
    }

    fn woodbury_solve_with(
        &self,
        chol: &Option<Cholesky<f64, nalgebra::Dyn>>,
        x: &[f64],
    ) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        let dinv_x: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| xi / self.diag_var(i))
            .collect();
        let chol = match chol {
            Some(c) => c,
            None => return dinv_x,
        };
        let r = self.rank;
        let mut t = DVector::<f64>::zeros(r);
        for j in 0..r {
            let col = self.factor_column(j);
            t[j] = col.iter().zip(&dinv_x).map(|(v, d)| v * d).sum();
        }
        let s = chol.solve(&t);
        let mut y = dinv_x;
        for j in 0..r {
            let sj = s[j];
            if sj == 0.0 {
                continue;
            }
            let col = self.factor_column(j);
            for (i, (yi, &vi)) in y.iter_mut().zip(col).enumerate() {
                *yi -= vi * sj / self.diag_var(i);
            }
        }
        y
    }

    /// log det Sigma via the determinant lemma:
    /// sum_i ln D_i + ln det(I + V^T D^-1 V).
    pub fn log_det(&self) -> Result<f64> {
        let mut ld: f64 = (0..self.dim()).map(|i| self.diag_var(i).ln()).sum();
        if let Some(chol) = self.core_cholesky()? {
            ld += 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Ok(ld)
    }

    /// Closed-form KL(q || N(0, sigma_p^2 I)).
    pub fn kl_to_isotropic(&self, prior: &IsotropicPrior) -> Result<f64> {
        let n = self.dim() as f64;
        let vp = prior.variance();
        let trace: f64 = (0..self.dim()).map(|i| self.diag_var(i)).sum::<f64>()
            + self.factors.iter().map(|v| v * v).sum::<f64>();
        let mu_sq: f64 = self.mu.iter().map(|m| m * m).sum();
        let log_det = self.log_det()?;
        Ok(0.5 * ((trace + mu_sq) / vp - n + n * vp.ln() - log_det))
    }

    /// Gradients of the KL with respect to the mean and the factor columns:
    /// dKL/dmu = mu / sigma_p^2, dKL/dV = V / sigma_p^2 - Sigma^-1 V.
    pub fn kl_grad(&self, prior: &IsotropicPrior) -> Result<(Vec<f64>, Vec<f64>)> {
        let vp = prior.variance();
        let grad_mu: Vec<f64> = self.mu.iter().map(|m| m / vp).collect();
        let chol = self.core_cholesky()?;
        let n = self.dim();
        let mut grad_factors = vec![0.0; self.factors.len()];
        for j in 0..self.rank {
            let col = self.factor_column(j);
            let solved = self.woodbury_solve_with(&chol, col);
            let out = &mut grad_factors[j * n..(j + 1) * n];
            for i in 0..n {
                out[i] = col[i] / vp - solved[i];
            }
        }
        Ok((grad_mu, grad_factors))
    }

    /// Log density at w.
    pub fn log_prob(&self, w: &[f64]) -> Result<f64> {
        let n = self.dim();
        if w.len() != n {
            return Err(Error::InvalidShape(format!(
                "point has {} entries, distribution is over {}",
                w.len(),
                n
            )));
        }
        let centered: Vec<f64> = w.iter().zip(&self.mu).map(|(wi, mi)| wi - mi).collect();
        let solved = self.woodbury_solve(&centered)?;
        let quad: f64 = centered.iter().zip(&solved).map(|(c, s)| c * s).sum();
        let log_det = self.log_det()?;
        Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }

    /// Gradient of the log density: -Sigma^-1 (w - mu).
    pub fn log_prob_grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if w.len() != n {
            return Err(Error::InvalidShape(format!(
                "point has {} entries, distribution is over {}",
                w.len(),
                n
            )));
        }
        let centered: Vec<f64> = w.iter().zip(&self.mu).map(|(wi, mi)| wi - mi).collect();
        let mut g = self.woodbury_solve(&centered)?;
        for gi in &mut g {
            *gi = -*gi;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputHead};

    fn tiny_arch(n_params_target: usize) -> ArchSpec {
        // [k, 1] arch has k + 1 parameters.
        ArchSpec::new(
            vec![n_params_target - 1, 1],
            Activation::Relu,
            OutputHead::Identity,
        )
        .unwrap()
    }

    #[test]
    fn sample_with_zero_noise_is_mean() {
        let arch = tiny_arch(3);
        let mu = vec![0.1, -0.2, 0.3];
        let q = LowRankGaussian::new(&arch, mu.clone(), vec![0.5, 0.5, 0.5], 1, 1e-3).unwrap();
        let w = q.sample_with_noise(&[0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.values(), mu.as_slice());
    }

    #[test]
    fn zero_factors_reduce_to_isotropic_jitter() {
        let arch = tiny_arch(3);
        let q = LowRankGaussian::new(&arch, vec![1.0, 2.0, 3.0], vec![0.0; 3], 1, 0.5).unwrap();
        let w = q.sample_with_noise(&[7.0], &[1.0, -2.0, 4.0]).unwrap();
        assert_eq!(w.values(), &[1.5, 1.0, 5.0]);
    }

    #[test]
    fn noise_shape_mismatch_is_invalid_shape() {
        let arch = tiny_arch(3);
        let q = LowRankGaussian::new(&arch, vec![0.0; 3], vec![0.0; 3], 1, 1e-3).unwrap();
        assert!(matches!(
            q.sample_with_noise(&[0.0, 0.0], &[0.0; 3]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            q.sample_with_noise(&[0.0], &[0.0; 2]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn kl_is_zero_at_the_prior() {
        let arch = tiny_arch(4);
        let prior = IsotropicPrior::new(0.81).unwrap();
        let q = LowRankGaussian::new(&arch, vec![0.0; 4], vec![0.0; 4], 1, 0.9).unwrap();
        let kl = q.kl_to_isotropic(&prior).unwrap();
        assert!(kl.abs() < 1e-12, "kl = {kl}");
        let (gm, gf) = q.kl_grad(&prior).unwrap();
        assert!(gm.iter().all(|&g| g == 0.0));
        assert!(gf.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn scalar_case_matches_hand_computed_kl_and_grad() {
        // A [1,1] arch has 2 parameters. Coordinate 1 stays at mu = v = 0
        // with sigma = sigma_p, contributing nothing, so the KL reduces to
        // the scalar case mu = v = sigma = sigma_p = 1:
        // Sigma = 2, KL = (2 - ln 2) / 2, dKL/dmu = 1, dKL/dv = 0.5.
        let arch = ArchSpec::new(vec![1, 1], Activation::Relu, OutputHead::Identity).unwrap();
        let prior = IsotropicPrior::new(1.0).unwrap();
        let q = LowRankGaussian::new(&arch, vec![1.0, 0.0], vec![1.0, 0.0], 1, 1.0).unwrap();
        let kl = q.kl_to_isotropic(&prior).unwrap();
        let expect = 0.5 * (2.0 - 2.0_f64.ln());
        assert!((kl - expect).abs() < 1e-12, "kl = {kl}, expect {expect}");
        let (gm, gf) = q.kl_grad(&prior).unwrap();
        assert!((gm[0] - 1.0).abs() < 1e-12);
        assert!((gf[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn woodbury_trivial_cases() {
        let arch = tiny_arch(3);
        let q = LowRankGaussian::new(&arch, vec![0.0; 3], vec![0.0; 3], 1, 0.5).unwrap();
        // V = 0: solve is x / sigma^2.
        let y = q.woodbury_solve(&[1.0, 2.0, -3.0]).unwrap();
        assert_eq!(y, vec![4.0, 8.0, -12.0]);
        // x = 0 -> 0.
        let q2 = LowRankGaussian::new(&arch, vec![0.0; 3], vec![0.3, -0.4, 0.9], 1, 0.5).unwrap();
        let y2 = q2.woodbury_solve(&[0.0; 3]).unwrap();
        assert!(y2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_prob_grad_is_zero_at_the_mean() {
        let arch = tiny_arch(3);
        let q =
            LowRankGaussian::new(&arch, vec![0.4, -0.1, 0.2], vec![0.3, 0.1, -0.2], 1, 1e-2)
                .unwrap();
        let g = q.log_prob_grad(&[0.4, -0.1, 0.2]).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn rank_zero_behaves_as_isotropic_gaussian() {
        let arch = tiny_arch(3);
        let q = LowRankGaussian::new(&arch, vec![0.0; 3], vec![], 0, 0.7).unwrap();
        let y = q.woodbury_solve(&[0.49, 0.98, 0.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12);
        assert!((y[1] - 2.0).abs() < 1e-12);
        let ld = q.log_det().unwrap();
        assert!((ld - 3.0 * (0.49f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn jitter_below_floor_is_rejected() {
        let arch = tiny_arch(3);
        assert!(LowRankGaussian::new(&arch, vec![0.0; 3], vec![0.0; 3], 1, 1e-9).is_err());
    }
}
