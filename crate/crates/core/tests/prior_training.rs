//! Behavior of the variational prior trainer: the conjugate toy, the
//! tau -> infinity limit, KL monotonicity in beta, and the sanity of the
//! Monte-Carlo objective estimator.

use dkprior_core::data::Matrix;
use dkprior_core::error::Result;
use dkprior_core::losses::{BatchRef, DomainLoss, DomainLossSpec};
use dkprior_core::nn::{Activation, ArchSpec, OutputHead, ParamVector};
use dkprior_core::prior::{
    elbo_eval, train_prior, ElboNoise, PriorTrainConfig, UnlabeledData, VariationalFamily,
    VariationalState, VariationalTrainer,
};
use dkprior_core::rng::{derive_indexed_stream, derive_stream};
use dkprior_core::variational::IsotropicPrior;

/// Toy loss phi(h_w, x) = first network parameter, independent of x.
/// Squared in the objective, this makes the pretraining posterior over that
/// coordinate an exact conjugate Gaussian.
struct FirstParamLoss;

impl DomainLoss for FirstParamLoss {
    fn eval_batch(
        &self,
        params: &ParamVector,
        batch: &BatchRef<'_>,
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        let mut grad = vec![0.0; params.len()];
        grad[0] = 1.0;
        Ok((0..batch.len())
            .map(|_| (params.values()[0], grad.clone()))
            .collect())
    }
}

fn tiny_arch() -> ArchSpec {
    // 2 parameters.
    ArchSpec::new(vec![1, 1], Activation::Relu, OutputHead::Identity).unwrap()
}

#[test]
fn conjugate_toy_recovers_the_analytic_posterior() {
    // k = 4 identical batch entries, tau = 1, sigma_p = 1: the optimum over
    // coordinate 0 is N(0, 1/(1 + k/tau^2)) = N(0, 0.2).
    let arch = tiny_arch();
    let k = 4usize;
    let xs = Matrix::from_rows(&vec![vec![0.0]; k]).unwrap();
    let batch = BatchRef::full(&xs);
    let spec = FirstParamLoss;
    let mut cfg = PriorTrainConfig {
        tau: 1.0,
        beta: 1.0,
        rank: 2,
        jitter_sigma: 1e-2,
        base_prior_variance: 1.0,
        mc_samples: 8,
        learning_rate: 0.05,
        epochs: 1,
        batch_size: k,
        seed: 0,
        family: VariationalFamily::Lowrank,
        init_scale: 0.3,
    };
    let mut rng = derive_stream(7, "conjugate-toy");
    let mut trainer = VariationalTrainer::new(&arch, &cfg, &mut rng).unwrap();
    for _ in 0..1500 {
        trainer.elbo_step(&batch, &spec, &mut rng).unwrap();
    }
    // Anneal to cut the Adam noise floor.
    cfg.learning_rate = 0.005;
    let mut trainer = VariationalTrainer::from_state(trainer.into_q(), &cfg).unwrap();
    for _ in 0..1500 {
        trainer.elbo_step(&batch, &spec, &mut rng).unwrap();
    }
    let q = trainer.into_q();
    let (mu0, var0) = match &q {
        VariationalState::LowRank(g) => {
            let var: f64 = (0..g.rank()).map(|j| g.factor_column(j)[0].powi(2)).sum::<f64>()
                + g.diag_var(0);
            (g.mean()[0], var)
        }
        _ => unreachable!(),
    };
    let post_var = 1.0 / (1.0 + k as f64);
    assert!(mu0.abs() <= 1e-2, "learned mean {mu0}");
    assert!(
        (var0 - post_var).abs() / post_var <= 0.25,
        "learned variance {var0} vs analytic {post_var}"
    );
}

#[test]
fn huge_tau_drives_q_to_the_prior() {
    // With tau = 1e12 the phi term vanishes and the optimum is q = p, which
    // the family can represent exactly when the jitter equals sigma_p.
    let arch = ArchSpec::new(vec![4, 8, 4], Activation::Relu, OutputHead::Identity).unwrap();
    let xs = Matrix::from_rows(&vec![vec![0.1, 0.2, -0.3, 0.0]; 8]).unwrap();
    let data = UnlabeledData::plain(&xs);
    let spec = DomainLossSpec::EnergyDamping {
        pendulum: dkprior_core::data::PendulumConfig::default(),
    };
    let cfg = PriorTrainConfig {
        tau: 1e12,
        beta: 1.0,
        rank: 2,
        jitter_sigma: 1.0,
        base_prior_variance: 1.0,
        mc_samples: 1,
        learning_rate: 0.05,
        epochs: 400,
        batch_size: 8,
        seed: 0,
        family: VariationalFamily::Lowrank,
        init_scale: 0.3,
    };
    let mut rng = derive_stream(8, "tau-limit");
    let (q, curve) = train_prior(&arch, &data, &spec, &cfg, &mut rng).unwrap();
    let kl = q
        .kl_to_isotropic(&IsotropicPrior::new(1.0).unwrap())
        .unwrap();
    assert!(kl <= 1e-3, "final KL {kl}");
    assert!(curve.len() == 400);
    // The first epoch started well away from the prior.
    assert!(curve[0].kl > 0.5, "initial KL {}", curve[0].kl);
}

#[test]
fn trivial_phi_reduces_the_objective_to_minus_beta_kl() {
    // Empty-mask background loss is identically zero, so each step's
    // objective must equal -beta KL and training drives KL down.
    let arch =
        ArchSpec::new(vec![4, 3, 2], Activation::Relu, OutputHead::SoftmaxLogits).unwrap();
    let xs = Matrix::from_rows(&vec![vec![0.1, 0.2, 0.3, 0.4]; 4]).unwrap();
    let spec = DomainLossSpec::Background {
        background_mask: vec![],
        variant: Default::default(),
    };
    let cfg = PriorTrainConfig {
        tau: 1.0,
        beta: 2.5,
        rank: 1,
        jitter_sigma: 1.0,
        base_prior_variance: 1.0,
        mc_samples: 2,
        learning_rate: 0.05,
        epochs: 1,
        batch_size: 4,
        seed: 0,
        family: VariationalFamily::Lowrank,
        init_scale: 0.3,
    };
    let mut rng = derive_stream(9, "phi-zero");
    let mut trainer = VariationalTrainer::new(&arch, &cfg, &mut rng).unwrap();
    let batch = BatchRef::full(&xs);
    let mut last_kl = f64::INFINITY;
    for step in 0..300 {
        let stats = trainer.elbo_step(&batch, &spec, &mut rng).unwrap();
        assert!(
            (stats.objective + cfg.beta * stats.kl).abs() <= 1e-12,
            "step {step}: objective {} vs -beta kl {}",
            stats.objective,
            -cfg.beta * stats.kl
        );
        last_kl = stats.kl;
    }
    assert!(last_kl < 0.05, "KL after training {last_kl}");
}

#[test]
fn final_kl_is_nonincreasing_in_beta() {
    // Three-point beta grid, five seeds, coarse monotonicity of the mean
    // final KL.
    let arch = ArchSpec::new(vec![4, 4, 4], Activation::Softplus, OutputHead::Identity).unwrap();
    let spec = DomainLossSpec::EnergyDamping {
        pendulum: dkprior_core::data::PendulumConfig::default(),
    };
    let betas = [0.01, 1.0, 100.0];
    let mut mean_kls = Vec::new();
    for &beta in &betas {
        let mut acc = 0.0;
        for seed in 0..5u64 {
            let mut rng = derive_indexed_stream(10, "beta-grid", seed);
            let xs = {
                use rand::Rng;
                let rows: Vec<Vec<f64>> = (0..48)
                    .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                Matrix::from_rows(&rows).unwrap()
            };
            let data = UnlabeledData::plain(&xs);
            let cfg = PriorTrainConfig {
                tau: 0.05,
                beta,
                rank: 2,
                jitter_sigma: 1e-2,
                base_prior_variance: 1.0,
                mc_samples: 2,
                learning_rate: 0.02,
                epochs: 15,
                batch_size: 16,
                seed,
                family: VariationalFamily::Lowrank,
                init_scale: 0.1,
            };
            let (q, _) = train_prior(&arch, &data, &spec, &cfg, &mut rng).unwrap();
            acc += q
                .kl_to_isotropic(&IsotropicPrior::new(1.0).unwrap())
                .unwrap();
        }
        mean_kls.push(acc / 5.0);
    }
    assert!(
        mean_kls[0] >= mean_kls[1] && mean_kls[1] >= mean_kls[2],
        "KL not monotone in beta: {mean_kls:?}"
    );
}

#[test]
fn mc_estimator_spread_shrinks_like_one_over_sqrt_samples() {
    // The across-seed spread of the S = 10^4 estimate should be about 10x
    // smaller than the S = 100 spread.
    let arch = ArchSpec::new(vec![4, 3, 4], Activation::Softplus, OutputHead::Identity).unwrap();
    let xs = Matrix::from_rows(&[
        vec![0.1, 0.5, -0.2, 0.3],
        vec![-0.4, 0.0, 0.6, -0.1],
    ])
    .unwrap();
    let batch = BatchRef::full(&xs);
    let spec = DomainLossSpec::EnergyDamping {
        pendulum: dkprior_core::data::PendulumConfig::default(),
    };
    let cfg = PriorTrainConfig {
        tau: 1.0,
        beta: 1.0,
        rank: 2,
        jitter_sigma: 0.05,
        base_prior_variance: 1.0,
        mc_samples: 1,
        learning_rate: 0.0,
        epochs: 1,
        batch_size: 2,
        seed: 0,
        family: VariationalFamily::Lowrank,
        init_scale: 0.3,
    };
    let mut init_rng = derive_stream(11, "mc-se/init");
    let q = VariationalState::init(&arch, &cfg, &mut init_rng).unwrap();
    let spread = |s: usize| -> f64 {
        let estimates: Vec<f64> = (0..8u64)
            .map(|seed| {
                let mut rng = derive_indexed_stream(11, "mc-se/seed", seed);
                let noise = ElboNoise::draw(&q, s, &mut rng);
                elbo_eval(&q, &batch, &spec, &cfg, &noise).unwrap().objective
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64)
            .sqrt()
    };
    let coarse = spread(100);
    let fine = spread(10_000);
    let ratio = coarse / fine.max(1e-300);
    assert!(
        (3.0..30.0).contains(&ratio),
        "spread ratio {ratio} (coarse {coarse}, fine {fine})"
    );
}

#[test]
fn huge_beta_drives_q_to_the_prior() {
    // beta = 1e6 makes the KL term dominate any phi evidence; with the
    // jitter at sigma_p the optimum q = p is representable and reached.
    let arch = ArchSpec::new(vec![4, 8, 4], Activation::Relu, OutputHead::Identity).unwrap();
    let xs = Matrix::from_rows(&vec![vec![0.1, 0.2, -0.3, 0.0]; 8]).unwrap();
    let data = UnlabeledData::plain(&xs);
    let spec = DomainLossSpec::EnergyDamping {
        pendulum: dkprior_core::data::PendulumConfig::default(),
    };
    // beta = 1e6 dominates the phi likelihood at this tau, so the optimum
    // collapses onto the base prior.
    let cfg = PriorTrainConfig {
        tau: 5.0,
        beta: 1e6,
        rank: 2,
        jitter_sigma: 1.0,
        base_prior_variance: 1.0,
        mc_samples: 1,
        learning_rate: 0.05,
        epochs: 400,
        batch_size: 8,
        seed: 0,
        family: VariationalFamily::Lowrank,
        init_scale: 0.3,
    };
    let mut rng = derive_stream(21, "beta-limit");
    let (q, _) = train_prior(&arch, &data, &spec, &cfg, &mut rng).unwrap();
    let kl = q
        .kl_to_isotropic(&IsotropicPrior::new(1.0).unwrap())
        .unwrap();
    assert!(kl <= 1e-2, "final KL {kl}");
}

#[test]
fn swag_mixture_prior_beats_the_isotropic_baseline_tenfold_on_pendulum() {
    use dkprior_core::data::{generate_splits, SplitSizes, TaskGenConfig};
    use dkprior_core::metrics::mean_phi_model;
    use dkprior_core::prior::{train_swag_prior, SwagPriorConfig};
    use dkprior_core::variational::PriorDist;

    let task = TaskGenConfig::Pendulum {
        config: dkprior_core::data::PendulumConfig::default(),
        traj_len: 20,
    };
    let sizes = SplitSizes {
        train: 1_000,
        val: 100,
        test: 300,
    };
    let splits = generate_splits(&task, sizes, 31).unwrap();
    let arch = ArchSpec::new(vec![4, 8, 4], Activation::Relu, OutputHead::Identity).unwrap();
    let spec = DomainLossSpec::EnergyDamping {
        pendulum: dkprior_core::data::PendulumConfig::default(),
    };
    let cfg = SwagPriorConfig {
        components: 3,
        warmup_epochs: 5,
        snapshot_interval_epochs: 5,
        snapshots_per_component: 3,
        learning_rate: 1e-6,
        batch_size: 128,
        seed: 31,
    };
    let data = UnlabeledData {
        xs: &splits.train.xs,
        masks: None,
        groups: None,
    };
    let mixture = train_swag_prior(&arch, &data, &spec, &cfg, 10.0, 1.0).unwrap();
    assert_eq!(mixture.n_components(), 3);
    // Every component covariance is positive definite: solving against a
    // random vector succeeds and round-trips.
    for c in mixture.components() {
        let x: Vec<f64> = (0..c.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = c.woodbury_solve(&x).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    let prior = PriorDist::Mixture(mixture);
    let iso = PriorDist::Isotropic {
        prior: IsotropicPrior::new(1.0).unwrap(),
        arch: arch.clone(),
    };
    let batch = BatchRef::full(&splits.test.xs);
    let mut rng = derive_stream(31, "swag-vs-iso");
    let phi_of = |p: &PriorDist, rng: &mut dkprior_core::rng::RunRng| -> f64 {
        let mut acc = 0.0;
        for _ in 0..10 {
            let w = p.sample(rng);
            let v = mean_phi_model(&w, &batch, &spec).unwrap();
            assert!(v.is_finite());
            acc += v;
        }
        acc / 10.0
    };
    let phi_swag = phi_of(&prior, &mut rng);
    let phi_iso = phi_of(&iso, &mut rng);
    assert!(
        phi_swag * 10.0 <= phi_iso,
        "swag prior phi {phi_swag} vs isotropic {phi_iso}"
    );
}
