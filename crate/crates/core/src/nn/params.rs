use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::ArchSpec;

/// Flat vector of all weights and biases for a given architecture.
///
/// Layout per affine layer `k`: row-major weights (out, in), then biases.
/// The flat/structured mapping is order-stable; see [`ArchSpec::weight_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    arch: ArchSpec,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arch: &ArchSpec) -> Self {
        Self {
            arch: arch.clone(),
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_values(arch: &ArchSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::InvalidShape(format!(
                "expected {} parameters for arch {:?}, got {}",
                arch.param_count(),
                arch.layer_sizes,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(
                "parameter vector contains non-finite entries".to_string(),
            ));
        }
        Ok(Self {
            arch: arch.clone(),
            values,
        })
    }

    /// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn he_init<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for k in 0..arch.n_layers() {
            let (fin, fout) = (arch.layer_sizes[k], arch.layer_sizes[k + 1]);
            let std = (2.0 / fin as f64).sqrt();
            for r in 0..fout {
                for c in 0..fin {
                    let z: f64 = rng.sample(StandardNormal);
                    p.values[arch.weight_index(k, r, c)] = std * z;
                }
            }
        }
        p
    }

    #[inline]
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight block of affine layer `k`, row-major (out, in).
    pub fn weights(&self, k: usize) -> &[f64] {
        let off = self.arch.layer_offset(k);
        let n = self.arch.layer_sizes[k] * self.arch.layer_sizes[k + 1];
        &self.values[off..off + n]
    }

    /// Bias block of affine layer `k`.
    pub fn biases(&self, k: usize) -> &[f64] {
        let off = self.arch.layer_offset(k) + self.arch.layer_sizes[k] * self.arch.layer_sizes[k + 1];
        &self.values[off..off + self.arch.layer_sizes[k + 1]]
    }

    pub fn weights_mut(&mut self, k: usize) -> &mut [f64] {
        let off = self.arch.layer_offset(k);
        let n = self.arch.layer_sizes[k] * self.arch.layer_sizes[k + 1];
        &mut self.values[off..off + n]
    }

    pub fn biases_mut(&mut self, k: usize) -> &mut [f64] {
        let sizes = (
            self.arch.layer_offset(k) + self.arch.layer_sizes[k] * self.arch.layer_sizes[k + 1],
            self.arch.layer_sizes[k + 1],
        );
        &mut self.values[sizes.0..sizes.0 + sizes.1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputHead};

    fn arch() -> ArchSpec {
        ArchSpec::new(vec![4, 3, 2], Activation::Relu, OutputHead::Identity).unwrap()
    }

    #[test]
    fn flat_structured_round_trip_is_identity() {
        let arch = arch();
        let values: Vec<f64> = (0..arch.param_count()).map(|i| i as f64).collect();
        let p = ParamVector::from_values(&arch, values.clone()).unwrap();
        // Rebuild the flat vector by reading through the structured view.
        let mut rebuilt = vec![0.0; arch.param_count()];
        for k in 0..arch.n_layers() {
            let (fin, fout) = (arch.layer_sizes[k], arch.layer_sizes[k + 1]);
            for r in 0..fout {
                for c in 0..fin {
                    rebuilt[arch.weight_index(k, r, c)] = p.weights(k)[r * fin + c];
                }
                rebuilt[arch.bias_index(k, r)] = p.biases(k)[r];
            }
        }
        assert_eq!(rebuilt, values);
    }

    #[test]
    fn from_values_rejects_bad_lengths_and_nan() {
        let arch = arch();
        assert!(matches!(
            ParamVector::from_values(&arch, vec![0.0; 3]),
            Err(crate::error::Error::InvalidShape(_))
        ));
        let mut v = vec![0.0; arch.param_count()];
        v[5] = f64::NAN;
        assert!(ParamVector::from_values(&arch, v).is_err());
    }

    #[test]
    fn he_init_has_zero_biases() {
        let arch = arch();
        let mut rng = crate::rng::derive_stream(7, "init");
        let p = ParamVector::he_init(&arch, &mut rng);
        for k in 0..arch.n_layers() {
            assert!(p.biases(k).iter().all(|&b| b == 0.0));
        }
        assert!(p.weights(0).iter().any(|&w| w != 0.0));
    }
}
