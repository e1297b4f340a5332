//! Fixed-topology feedforward networks over flat parameter vectors.
//!
//! Networks are plain MLPs described by an [`ArchSpec`]. All differentiation
//! is done by explicit analytic passes over the fixed topology: reverse mode
//! for parameter/input gradients and a forward-over-reverse sweep for the
//! masked input-gradient-norm objective. There is no tape.

mod arch;
mod diff;
mod params;

pub use arch::{Activation, ArchSpec, OutputHead};
pub use diff::{
    forward, grad_input, grad_params, input_gradient, masked_input_grad_sq,
    masked_jacobian_frobenius, Scalarize,
};
pub use params::ParamVector;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(zs: &[f64]) -> f64 {
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + zs.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(zs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(zs);
    zs.iter().map(|z| (z - lse).exp()).collect()
}
