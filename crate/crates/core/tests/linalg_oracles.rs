//! Dense-matrix oracles for the low-rank Gaussian machinery: Woodbury
//! solves, log-determinants, KL values, and KL gradients are all checked
//! against explicit dense computations on random priors.

mod common;

use common::fd_gradient;
use dkprior_core::nn::{Activation, ArchSpec, OutputHead, ParamVector};
use dkprior_core::rng::derive_stream;
use dkprior_core::variational::{
    GaussianMixturePrior, IsotropicPrior, LowRankGaussian,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn arch_with_params(n: usize) -> ArchSpec {
    ArchSpec::new(vec![n - 1, 1], Activation::Relu, OutputHead::Identity).unwrap()
}

fn dense_sigma(q: &LowRankGaussian) -> DMatrix<f64> {
    let n = q.dim();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = q.diag_var(i);
    }
    for j in 0..q.rank() {
        let col = q.factor_column(j);
        for a in 0..n {
            for b in 0..n {
                s[(a, b)] += col[a] * col[b];
            }
        }
    }
    s
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn fifty_random_priors_match_dense_computation() {
    let mut rng = derive_stream(200, "dense-oracle");
    for trial in 0..50 {
        let n = rng.gen_range(2..=50usize);
        let r = rng.gen_range(0..=8usize.min(n));
        let arch = arch_with_params(n);
        let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let factors: Vec<f64> = (0..n * r).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let sigma = rng.gen_range(0.05..1.5);
        let q = LowRankGaussian::new(&arch, mu.clone(), factors, r, sigma).unwrap();
        let prior = IsotropicPrior::new(rng.gen_range(0.2..3.0)).unwrap();

        let dense = dense_sigma(&q);
        let chol = dense.clone().cholesky().expect("dense Sigma is PD");

        // Woodbury solve vs dense solve.
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let solved = q.woodbury_solve(&x).unwrap();
        let dense_solved = chol.solve(&DVector::from_column_slice(&x));
        let num: f64 = solved
            .iter()
            .zip(dense_solved.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = dense_solved.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den.max(1e-300) <= 1e-8, "trial {trial}: solve rel err");

        // Residual check: Sigma * solved == x.
        let resid = &dense * DVector::from_column_slice(&solved) - DVector::from_column_slice(&x);
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            resid.norm() / xnorm.max(1e-300) <= 1e-9,
            "trial {trial}: residual"
        );

        // Log-determinant via the determinant lemma vs dense Cholesky.
        let log_det = q.log_det().unwrap();
        let dense_log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        assert!(
            rel_err(log_det, dense_log_det) <= 1e-8,
            "trial {trial}: logdet {log_det} vs {dense_log_det}"
        );

        // KL vs the dense formula.
        let kl = q.kl_to_isotropic(&prior).unwrap();
        let vp = prior.variance();
        let dense_kl = 0.5
            * ((dense.trace() + mu.iter().map(|m| m * m).sum::<f64>()) / vp - n as f64
                + n as f64 * vp.ln()
                - dense_log_det);
        assert!(
            rel_err(kl, dense_kl) <= 1e-8,
            "trial {trial}: kl {kl} vs {dense_kl}"
        );

        // KL gradient w.r.t. V vs dense Sigma^-1 V.
        if r > 0 {
            let (_, grad_v) = q.kl_grad(&prior).unwrap();
            let mut max_err: f64 = 0.0;
            for j in 0..r {
                let col = DVector::from_column_slice(q.factor_column(j));
                let dense_col = chol.solve(&col);
                for i in 0..n {
                    let expect = q.factor_column(j)[i] / vp - dense_col[i];
                    let got = grad_v[j * n + i];
                    let scale = expect.abs().max(got.abs()).max(1.0);
                    max_err = max_err.max((expect - got).abs() / scale);
                }
            }
            assert!(max_err <= 1e-8, "trial {trial}: kl grad err {max_err}");
        }
    }
}

#[test]
fn kl_is_nonnegative_and_zero_only_at_the_prior() {
    let mut rng = derive_stream(201, "kl-nonneg");
    let arch = arch_with_params(12);
    let prior = IsotropicPrior::new(0.9).unwrap();
    for _ in 0..200 {
        let r = rng.gen_range(0..=4usize);
        let mu: Vec<f64> = (0..12).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let factors: Vec<f64> = (0..12 * r).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let sigma = rng.gen_range(0.1..1.5);
        let q = LowRankGaussian::new(&arch, mu, factors, r, sigma).unwrap();
        let kl = q.kl_to_isotropic(&prior).unwrap();
        assert!(kl >= -1e-12, "kl = {kl}");
    }
    // Exactly at the prior and slightly off it.
    let q0 = LowRankGaussian::new(&arch, vec![0.0; 12], vec![], 0, 0.9f64.sqrt()).unwrap();
    assert!(q0.kl_to_isotropic(&prior).unwrap().abs() < 1e-12);
    let mut mu = vec![0.0; 12];
    mu[3] = 1e-3;
    let q1 = LowRankGaussian::new(&arch, mu, vec![], 0, 0.9f64.sqrt()).unwrap();
    assert!(q1.kl_to_isotropic(&prior).unwrap() > 0.0);
}

#[test]
fn sample_covariance_matches_low_rank_form() {
    // n = 3, r = 1: the empirical covariance of 1e5 seeded samples matches
    // v v^T + sigma^2 I entrywise within 5e-2.
    let arch = arch_with_params(3);
    let v = [0.6, -0.4, 0.9];
    let sigma = 0.5;
    let q = LowRankGaussian::new(&arch, vec![0.0; 3], v.to_vec(), 1, sigma).unwrap();
    let mut rng = derive_stream(202, "mc-cov");
    let n_samples = 100_000;
    let mut sums = [0.0f64; 3];
    let mut cross = [[0.0f64; 3]; 3];
    for _ in 0..n_samples {
        let w = q.sample(&mut rng);
        for i in 0..3 {
            sums[i] += w.values()[i];
            for j in 0..3 {
                cross[i][j] += w.values()[i] * w.values()[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let mean_i = sums[i] / n_samples as f64;
            let mean_j = sums[j] / n_samples as f64;
            let cov = cross[i][j] / n_samples as f64 - mean_i * mean_j;
            let expect = v[i] * v[j] + if i == j { sigma * sigma } else { 0.0 };
            assert!(
                (cov - expect).abs() <= 5e-2,
                "cov[{i}][{j}] = {cov}, expect {expect}"
            );
        }
    }
}

#[test]
fn sampling_is_exactly_linear_in_the_noise() {
    let arch = arch_with_params(5);
    let mut rng = derive_stream(203, "linear-noise");
    let factors: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mu: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let q = LowRankGaussian::new(&arch, mu, factors, 2, 0.3).unwrap();
    let er1 = [0.5, -1.0];
    let er2 = [2.0, 0.25];
    let en1: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let en2: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let alpha = 1.3;
    let combo_r: Vec<f64> = er1.iter().zip(&er2).map(|(a, b)| alpha * a + b).collect();
    let combo_n: Vec<f64> = en1.iter().zip(&en2).map(|(a, b)| alpha * a + b).collect();
    let s1 = q.sample_with_noise(&er1, &en1).unwrap();
    let s2 = q.sample_with_noise(&er2, &en2).unwrap();
    let sc = q.sample_with_noise(&combo_r, &combo_n).unwrap();
    let s0 = q.sample_with_noise(&[0.0; 2], &vec![0.0; 5]).unwrap();
    for i in 0..5 {
        // s(a e1 + e2) - s(0) = a (s(e1) - s(0)) + (s(e2) - s(0)).
        let lhs = sc.values()[i] - s0.values()[i];
        let rhs = alpha * (s1.values()[i] - s0.values()[i]) + (s2.values()[i] - s0.values()[i]);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn mixture_log_prob_grad_matches_finite_differences() {
    // 2-component mixture over 2 parameters.
    let arch = ArchSpec::new(vec![1, 1], Activation::Relu, OutputHead::Identity).unwrap();
    let c1 = LowRankGaussian::new(&arch, vec![0.5, -0.2], vec![0.4, 0.1], 1, 0.3).unwrap();
    let c2 = LowRankGaussian::new(&arch, vec![-0.7, 0.6], vec![-0.2, 0.5], 1, 0.4).unwrap();
    let mixture = GaussianMixturePrior::new(vec![c1, c2]).unwrap();
    let w = [0.1, 0.3];
    let analytic = mixture.log_prob_grad(&w).unwrap();
    let numeric = fd_gradient(|v| mixture.log_prob(v).unwrap(), &w);
    common::assert_grad_close(&analytic, &numeric, 1e-5, "mixture log prob grad");
}

#[test]
fn mixture_with_one_component_matches_it_bit_for_bit() {
    let arch = arch_with_params(4);
    let mut rng = derive_stream(204, "mix1");
    let mu: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let factors: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = LowRankGaussian::new(&arch, mu, factors, 2, 0.2).unwrap();
    let mixture = GaussianMixturePrior::new(vec![c.clone()]).unwrap();
    let w = ParamVector::he_init(&arch, &mut rng);
    assert_eq!(
        mixture.log_prob_grad(w.values()).unwrap(),
        c.log_prob_grad(w.values()).unwrap()
    );
}
