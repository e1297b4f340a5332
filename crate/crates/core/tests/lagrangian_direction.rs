//! Paired-run direction check for the regularized baseline: a large lambda
//! must not end with more domain-loss violation than plain supervised
//! training.

use dkprior_core::data::{generate_splits, SplitSizes, TaskGenConfig};
use dkprior_core::losses::{BatchRef, DomainLossSpec};
use dkprior_core::metrics::mean_phi_model;
use dkprior_core::nn::{Activation, ArchSpec, OutputHead};
use dkprior_core::posterior::{lagrangian_train, LagrangianConfig};
use dkprior_core::rng::derive_stream;

#[test]
fn large_lambda_does_not_exceed_supervised_phi_on_pendulum() {
    let task = TaskGenConfig::Pendulum {
        config: dkprior_core::data::PendulumConfig::default(),
        traj_len: 20,
    };
    let sizes = SplitSizes {
        train: 1_000,
        val: 100,
        test: 300,
    };
    let splits = generate_splits(&task, sizes, 17).unwrap();
    let arch = ArchSpec::new(vec![4, 8, 4], Activation::Relu, OutputHead::Identity).unwrap();
    let spec = DomainLossSpec::EnergyDamping {
        pendulum: dkprior_core::data::PendulumConfig::default(),
    };
    let cfg = LagrangianConfig {
        learning_rate: 0.005,
        epochs: 20,
        batch_size: 128,
        seed: 17,
    };
    let unlabeled = BatchRef::full(&splits.train.xs);
    let test_batch = BatchRef::full(&splits.test.xs);

    let phi_of = |lambda: f64| -> f64 {
        let mut rng = derive_stream(17, "lagrangian-direction");
        let w = lagrangian_train(&arch, &splits.train, &unlabeled, &spec, lambda, &cfg, &mut rng)
            .unwrap();
        mean_phi_model(&w, &test_batch, &spec).unwrap()
    };
    let phi_plain = phi_of(0.0);
    let phi_regularized = phi_of(1e3);
    assert!(
        phi_regularized <= phi_plain,
        "lambda = 1e3 gave phi {phi_regularized}, plain supervised gave {phi_plain}"
    );
}
