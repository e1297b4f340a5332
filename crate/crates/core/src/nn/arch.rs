use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softmax};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            // ReLU'(0) := 0, ReLU'' := 0 everywhere.
            Activation::Relu => z.max(0.0),
            Activation::Softplus => z.max(0.0) + (1.0 + (-z.abs()).exp()).ln(),
        }
    }

    #[inline]
    pub(crate) fn prime(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
        }
    }

    #[inline]
    pub(crate) fn second(self, z: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

/// Output head, applied on top of the raw network outputs when predicting.
/// `forward` always returns pre-head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Identity,
    Sigmoid,
    SoftmaxLogits,
}

impl OutputHead {
    /// Maps raw outputs to predictions (regression values or probabilities).
    pub fn apply(self, logits: &[f64]) -> Vec<f64> {
        match self {
            OutputHead::Identity => logits.to_vec(),
            OutputHead::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
            OutputHead::SoftmaxLogits => softmax(logits),
        }
    }
}

/// Architecture descriptor for a fixed-topology MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Input dim, hidden dims..., output dim. Length >= 2, all entries >= 1.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
}

impl ArchSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "layer_sizes needs at least input and output dims, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must all be >= 1, got {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes,
            activation,
            output_head,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    #[inline]
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total flat parameter count: sum of (in + 1) * out over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Flat offset of layer `k`'s weight block; biases follow the weights.
    pub(crate) fn layer_offset(&self, k: usize) -> usize {
        self.layer_sizes[..=k]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Flat index of weight (row, col) in affine layer `k`. Weights are
    /// row-major with shape (out_dim, in_dim).
    pub fn weight_index(&self, k: usize, row: usize, col: usize) -> usize {
        debug_assert!(k < self.n_layers());
        debug_assert!(row < self.layer_sizes[k + 1] && col < self.layer_sizes[k]);
        self.layer_offset(k) + row * self.layer_sizes[k] + col
    }

    /// Flat index of bias `row` in affine layer `k`.
    pub fn bias_index(&self, k: usize, row: usize) -> usize {
        debug_assert!(k < self.n_layers());
        debug_assert!(row < self.layer_sizes[k + 1]);
        self.layer_offset(k) + self.layer_sizes[k + 1] * self.layer_sizes[k] + row
    }
}
