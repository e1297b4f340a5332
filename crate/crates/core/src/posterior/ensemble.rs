//! Ensembles of sampled weights and their prediction averaging modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, ParamVector};

/// How member outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Average raw logits, then apply the head.
    Logits,
    /// Apply the head per member, then average.
    Predictions,
}

/// Immutable collection of sampled weights over one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<ParamVector>,
    averaging: Averaging,
}

impl Ensemble {
    pub fn new(members: Vec<ParamVector>, averaging: Averaging) -> Result<Self> {
        let first = members.first().ok_or_else(|| {
            Error::InvalidConfig("ensemble needs at least one member".to_string())
        })?;
        let arch = first.arch().clone();
        if members.iter().any(|m| m.arch() != &arch) {
            return Err(Error::InvalidConfig(
                "ensemble members have mismatched architectures".to_string(),
            ));
        }
        Ok(Self { members, averaging })
    }

    #[inline]
    pub fn members(&self) -> &[ParamVector] {
        &self.members
    }

    #[inline]
    pub fn averaging(&self) -> Averaging {
        self.averaging
    }

    #[inline]
    pub fn arch(&self) -> &crate::nn::ArchSpec {
        self.members[0].arch()
    }

    /// Mean raw logits over members.
    pub fn mean_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.arch().output_dim()];
        for m in &self.members {
            let z = forward(m, x)?;
            for (a, zi) in acc.iter_mut().zip(&z) {
                *a += zi;
            }
        }
        let k = self.members.len() as f64;
        for a in &mut acc {
            *a /= k;
        }
        Ok(acc)
    }

    /// Pooled ensemble: same members, either averaging mode.
    pub fn with_averaging(&self, averaging: Averaging) -> Ensemble {
        Ensemble {
            members: self.members.clone(),
            averaging,
        }
    }
}

/// Ensemble prediction: probabilities for classifier heads, raw outputs for
/// identity heads. Ties in downstream argmax are broken toward the lowest
/// class index by the metrics layer.
pub fn ensemble_predict(ensemble: &Ensemble, x: &[f64]) -> Result<Vec<f64>> {
    let head = ensemble.arch().output_head;
    match ensemble.averaging {
        Averaging::Logits => Ok(head.apply(&ensemble.mean_logits(x)?)),
        Averaging::Predictions => {
            let mut acc = vec![0.0; ensemble.arch().output_dim()];
            for m in ensemble.members() {
                let pred = head.apply(&forward(m, x)?);
                for (a, p) in acc.iter_mut().zip(&pred) {
                    *a += p;
                }
            }
            let k = ensemble.members().len() as f64;
            for a in &mut acc {
                *a /= k;
            }
            Ok(acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ArchSpec, OutputHead};

    fn binary_arch() -> ArchSpec {
        ArchSpec::new(vec![1, 1], Activation::Relu, OutputHead::Sigmoid).unwrap()
    }

    fn constant_logit_member(arch: &ArchSpec, logit: f64) -> ParamVector {
        let mut p = ParamVector::zeros(arch);
        p.values_mut()[arch.bias_index(0, 0)] = logit;
        p
    }

    #[test]
    fn identical_members_match_single_member_in_both_modes() {
        let arch = binary_arch();
        let m = constant_logit_member(&arch, 0.7);
        let single = Ensemble::new(vec![m.clone()], Averaging::Logits).unwrap();
        let trip = Ensemble::new(vec![m.clone(), m.clone(), m], Averaging::Logits).unwrap();
        let x = [0.0];
        let a = ensemble_predict(&single, &x).unwrap();
        let b = ensemble_predict(&trip, &x).unwrap();
        let c = ensemble_predict(&trip.with_averaging(Averaging::Predictions), &x).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15);
        assert!((a[0] - c[0]).abs() < 1e-15);
    }

    #[test]
    fn opposite_logits_give_half_in_both_modes() {
        let arch = binary_arch();
        let members = vec![
            constant_logit_member(&arch, 2.0),
            constant_logit_member(&arch, -2.0),
        ];
        let x = [0.0];
        let logits = Ensemble::new(members.clone(), Averaging::Logits).unwrap();
        let preds = Ensemble::new(members, Averaging::Predictions).unwrap();
        let a = ensemble_predict(&logits, &x).unwrap();
        let b = ensemble_predict(&preds, &x).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15, "logit mode {}", a[0]);
        // sigma(2) + sigma(-2) = 1 exactly by symmetry.
        assert!((b[0] - 0.5).abs() < 1e-15, "prediction mode {}", b[0]);
    }

    #[test]
    fn logits_mode_matches_mean_of_logits_oracle_and_is_permutation_invariant() {
        let arch = ArchSpec::new(vec![2, 3, 4], Activation::Softplus, OutputHead::SoftmaxLogits)
            .unwrap();
        let mut rng = crate::rng::derive_stream(4, "ens");
        let members: Vec<ParamVector> =
            (0..3).map(|_| ParamVector::he_init(&arch, &mut rng)).collect();
        let x = [0.3, -0.8];
        let ens = Ensemble::new(members.clone(), Averaging::Logits).unwrap();
        let mut oracle = vec![0.0; 4];
        for m in &members {
            for (o, z) in oracle.iter_mut().zip(&forward(m, &x).unwrap()) {
                *o += z / 3.0;
            }
        }
        let got = ens.mean_logits(&x).unwrap();
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14);
        }
        let permuted = Ensemble::new(
            vec![members[2].clone(), members[0].clone(), members[1].clone()],
            Averaging::Logits,
        )
        .unwrap();
        let p = ensemble_predict(&permuted, &x).unwrap();
        let q = ensemble_predict(&ens, &x).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        assert!(Ensemble::new(vec![], Averaging::Logits).is_err());
    }
}
