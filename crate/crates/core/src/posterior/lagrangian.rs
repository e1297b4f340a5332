//! Frequentist baseline: supervised loss plus lambda times the mean domain
//! loss over unlabeled data, minimized with Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelKind, Matrix};
use crate::error::{Error, Result};
use crate::losses::{BatchRef, DomainLoss};
use crate::nn::{forward, grad_params, softmax, ArchSpec, ParamVector};
use crate::opt::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Gradient of the mean supervised loss over the batch: cross-entropy for
/// class/binary labels, squared error for regression.
fn supervised_grad(
    params: &ParamVector,
    xs: &Matrix,
    ys: &Matrix,
    idx: &[usize],
    label_kind: LabelKind,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let out_dim = params.arch().output_dim();
    let scale = 1.0 / idx.len() as f64;
    for &i in idx {
        let x = xs.row(i);
        let z = forward(params, x)?;
        let upstream: Vec<f64> = match label_kind {
            LabelKind::Class { n_classes } => {
                let y = ys.get(i, 0) as usize;
                if y >= n_classes || n_classes != out_dim {
                    return Err(Error::InvalidShape(format!(
                        "label {y} incompatible with {out_dim} outputs"
                    )));
                }
                let p = softmax(&z);
                loss -= scale * (p[y].max(1e-300)).ln();
                (0..out_dim)
                    .map(|c| scale * (p[c] - if c == y { 1.0 } else { 0.0 }))
                    .collect()
            }
            LabelKind::Binary => {
                let y = ys.get(i, 0);
                let p = crate::nn::sigmoid(z[0]);
                loss -= scale * (y * p.max(1e-300).ln() + (1.0 - y) * (1.0 - p).max(1e-300).ln());
                vec![scale * (p - y)]
            }
            LabelKind::Regression => (0..out_dim)
                .map(|c| {
                    let r = z[c] - ys.get(i, c);
                    loss += scale * r * r;
                    scale * 2.0 * r
                })
                .collect(),
        };
        let g = grad_params(params, x, &upstream)?;
        for (gi, gk) in grad.iter_mut().zip(&g) {
            *gi += gk;
        }
    }
    Ok((loss, grad))
}

/// Minimizes (1/n) sum l(h, x_i, y_i) + lambda (1/k) sum phi(h, x'_j) by
/// Adam over minibatches of both sets. With lambda = 0 the phi term is never
/// evaluated. Returns the final weights.
pub fn lagrangian_train<R: Rng + ?Sized>(
    arch: &ArchSpec,
    data: &Dataset,
    unlabeled: &BatchRef<'_>,
    spec: &dyn DomainLoss,
    lambda: f64,
    cfg: &LagrangianConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if data.n_rows() == 0 {
        return Err(Error::InvalidConfig("labeled data is empty".to_string()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "batch size must be positive".to_string(),
        ));
    }
    let mut w = ParamVector::he_init(arch, rng);
    let mut opt = Adam::new(cfg.learning_rate, w.len());
    for _epoch in 0..cfg.epochs {
        let order = crate::data::shuffled_indices(data.n_rows(), rng);
        let u_order = if lambda > 0.0 {
            crate::data::shuffled_indices(unlabeled.len(), rng)
        } else {
            Vec::new()
        };
        let mut u_cursor = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let (_, mut grad) =
                supervised_grad(&w, &data.xs, &data.ys, batch_idx, data.label_kind)?;
            if lambda > 0.0 && !u_order.is_empty() {
                let take = cfg.batch_size.min(u_order.len());
                let mut u_batch = Vec::with_capacity(take);
                for _ in 0..take {
                    u_batch.push(u_order[u_cursor % u_order.len()]);
                    u_cursor += 1;
                }
                let batch = unlabeled.with_idx(&u_batch);
                match crate::losses::phi_batch_mean(&w, &batch, spec) {
                    Ok((_, phi_grad)) => {
                        for (g, pg) in grad.iter_mut().zip(&phi_grad) {
                            *g += lambda * pg;
                        }
                    }
                    // A batch that cannot support the estimate is skipped.
                    Err(Error::DegenerateBatch(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            opt.step(w.values_mut(), &grad);
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PendulumConfig, TaskMeta};
    use crate::losses::DomainLossSpec;
    use crate::nn::{Activation, OutputHead};

    fn toy_data() -> Dataset {
        Dataset {
            xs: Matrix::from_rows(&[
                vec![0.1, 0.0, 0.0, 0.0],
                vec![0.0, 0.2, 0.0, 0.0],
                vec![0.0, 0.0, 0.3, 0.0],
            ])
            .unwrap(),
            ys: Matrix::from_rows(&[
                vec![0.1, 0.0, 0.0, 0.0],
                vec![0.0, 0.2, 0.0, 0.0],
                vec![0.0, 0.0, 0.3, 0.0],
            ])
            .unwrap(),
            masks: None,
            region_flags: None,
            label_kind: LabelKind::Regression,
            meta: TaskMeta::Pendulum {
                config: PendulumConfig::default(),
            },
            split: "train".to_string(),
            standardizer: None,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_the_init_unchanged() {
        let arch = ArchSpec::new(vec![4, 3, 4], Activation::Relu, OutputHead::Identity).unwrap();
        let data = toy_data();
        let spec = DomainLossSpec::EnergyDamping {
            pendulum: PendulumConfig::default(),
        };
        let cfg = LagrangianConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 3,
            seed: 0,
        };
        let unlabeled = BatchRef::full(&data.xs);
        let mut rng1 = crate::rng::derive_stream(8, "lag");
        let mut rng2 = crate::rng::derive_stream(8, "lag");
        let w = lagrangian_train(&arch, &data, &unlabeled, &spec, 0.5, &cfg, &mut rng1).unwrap();
        let init = ParamVector::he_init(&arch, &mut rng2);
        assert_eq!(w.values(), init.values());
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let arch = ArchSpec::new(vec![4, 3, 4], Activation::Relu, OutputHead::Identity).unwrap();
        let data = toy_data();
        let spec = DomainLossSpec::EnergyDamping {
            pendulum: PendulumConfig::default(),
        };
        let cfg = LagrangianConfig {
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 3,
            seed: 0,
        };
        let unlabeled = BatchRef::full(&data.xs);
        let mut rng = crate::rng::derive_stream(8, "lag");
        assert!(
            lagrangian_train(&arch, &data, &unlabeled, &spec, -1.0, &cfg, &mut rng).is_err()
        );
    }

    #[test]
    fn supervised_training_reduces_the_loss() {
        let arch = ArchSpec::new(vec![4, 8, 4], Activation::Softplus, OutputHead::Identity)
            .unwrap();
        let data = toy_data();
        let spec = DomainLossSpec::EnergyDamping {
            pendulum: PendulumConfig::default(),
        };
        let cfg = LagrangianConfig {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 3,
            seed: 0,
        };
        let unlabeled = BatchRef::full(&data.xs);
        let mut rng = crate::rng::derive_stream(9, "lag");
        let w = lagrangian_train(&arch, &data, &unlabeled, &spec, 0.0, &cfg, &mut rng).unwrap();
        let mut loss = 0.0;
        for i in 0..3 {
            let z = forward(&w, data.xs.row(i)).unwrap();
            for c in 0..4 {
                loss += (z[c] - data.ys.get(i, c)).powi(2);
            }
        }
        assert!(loss < 0.01, "final squared error {loss}");
    }
}
