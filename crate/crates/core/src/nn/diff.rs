//! Analytic differentiation passes over the MLP topology.
//!
//! Three levels are provided:
//! - reverse mode for parameter gradients (`grad_params`),
//! - reverse mode to the input (`grad_input` / `input_gradient`),
//! - a forward-over-reverse sweep (`masked_input_grad_sq`) that returns the
//!   gradient with respect to the parameters of a masked squared
//!   input-gradient norm. This is the double-backward needed by
//!   gradient-penalty style losses.

use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, softmax, ArchSpec, ParamVector};

/// Primal forward pass with everything the backward passes need.
pub(crate) struct ForwardTrace {
    /// a[0] = x, a[k] = act(z[k-1]) for hidden layers; length = n_layers.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activations z[k] per affine layer; z[last] is the raw output.
    pub preacts: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.preacts.last().unwrap()
    }
}

fn affine(weights: &[f64], biases: &[f64], input: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    let mut out = biases.to_vec();
    for r in 0..out_dim {
        let row = &weights[r * in_dim..(r + 1) * in_dim];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        out[r] += acc;
    }
    out
}

/// `out[c] += m[r][c] * v[r]` for a row-major (rows, cols) matrix: y = M^T v.
fn affine_transpose_into(weights: &[f64], v: &[f64], in_dim: usize, out: &mut [f64]) {
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        let row = &weights[r * in_dim..(r + 1) * in_dim];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * vr;
        }
    }
}

pub(crate) fn forward_trace(params: &ParamVector, x: &[f64]) -> Result<ForwardTrace> {
    let arch = params.arch();
    if x.len() != arch.input_dim() {
        return Err(Error::InvalidShape(format!(
            "input has {} features, arch expects {}",
            x.len(),
            arch.input_dim()
        )));
    }
    let n_layers = arch.n_layers();
    let mut activations = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    activations.push(x.to_vec());
    for k in 0..n_layers {
        let out_dim = arch.layer_sizes[k + 1];
        let z = affine(params.weights(k), params.biases(k), &activations[k], out_dim);
        if k < n_layers - 1 {
            let a = z.iter().map(|&v| arch.activation.apply(v)).collect();
            activations.push(a);
        }
        preacts.push(z);
    }
    Ok(ForwardTrace {
        activations,
        preacts,
    })
}

/// Deterministic forward evaluation; returns the raw (pre-head) outputs.
pub fn forward(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let mut trace = forward_trace(params, x)?;
    Ok(trace.preacts.pop().unwrap())
}

/// Gradient of `upstream . forward(params, x)` with respect to the flat
/// parameter vector. Exact reverse mode.
pub fn grad_params(params: &ParamVector, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    let trace = forward_trace(params, x)?;
    grad_params_traced(params, &trace, upstream)
}

pub(crate) fn grad_params_traced(
    params: &ParamVector,
    trace: &ForwardTrace,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let arch = params.arch();
    if upstream.len() != arch.output_dim() {
        return Err(Error::InvalidShape(format!(
            "upstream has {} entries, arch outputs {}",
            upstream.len(),
            arch.output_dim()
        )));
    }
    let mut grad = vec![0.0; params.len()];
    let mut delta = upstream.to_vec();
    for k in (0..arch.n_layers()).rev() {
        accumulate_affine_grads(arch, k, &delta, &trace.activations[k], &mut grad);
        if k > 0 {
            delta = backprop_through_layer(params, arch, k, &delta, &trace.preacts[k - 1]);
        }
    }
    Ok(grad)
}

fn accumulate_affine_grads(
    arch: &ArchSpec,
    k: usize,
    delta: &[f64],
    input: &[f64],
    grad: &mut [f64],
) {
    let in_dim = arch.layer_sizes[k];
    let w_off = arch.layer_offset(k);
    let b_off = w_off + in_dim * arch.layer_sizes[k + 1];
    for (r, &d) in delta.iter().enumerate() {
        grad[b_off + r] += d;
        if d == 0.0 {
            continue;
        }
        let row = &mut grad[w_off + r * in_dim..w_off + (r + 1) * in_dim];
        for (g, a) in row.iter_mut().zip(input) {
            *g += d * a;
        }
    }
}

/// Weight-only variant for the tangent affine zdot = W adot, which has no
/// bias term.
fn accumulate_weight_grads(
    arch: &ArchSpec,
    k: usize,
    delta: &[f64],
    input: &[f64],
    grad: &mut [f64],
) {
    let in_dim = arch.layer_sizes[k];
    let w_off = arch.layer_offset(k);
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut grad[w_off + r * in_dim..w_off + (r + 1) * in_dim];
        for (g, a) in row.iter_mut().zip(input) {
            *g += d * a;
        }
    }
}

/// delta W_k^T, gated by the previous layer's activation derivative.
fn backprop_through_layer(
    params: &ParamVector,
    arch: &ArchSpec,
    k: usize,
    delta: &[f64],
    prev_preact: &[f64],
) -> Vec<f64> {
    let in_dim = arch.layer_sizes[k];
    let mut prev = vec![0.0; in_dim];
    affine_transpose_into(params.weights(k), delta, in_dim, &mut prev);
    for (p, &z) in prev.iter_mut().zip(prev_preact) {
        *p *= arch.activation.prime(z);
    }
    prev
}

/// Gradient of `upstream . output` with respect to the input x.
pub fn input_gradient(params: &ParamVector, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    let trace = forward_trace(params, x)?;
    Ok(input_gradient_traced(params, &trace, upstream))
}

pub(crate) fn input_gradient_traced(
    params: &ParamVector,
    trace: &ForwardTrace,
    upstream: &[f64],
) -> Vec<f64> {
    let arch = params.arch();
    let mut delta = upstream.to_vec();
    for k in (1..arch.n_layers()).rev() {
        delta = backprop_through_layer(params, arch, k, &delta, &trace.preacts[k - 1]);
    }
    let mut xbar = vec![0.0; arch.input_dim()];
    affine_transpose_into(params.weights(0), &delta, arch.input_dim(), &mut xbar);
    xbar
}

/// Jacobian of the raw outputs with respect to the input: row c is
/// the gradient of output c. For ReLU this is the almost-everywhere
/// Jacobian with ReLU'(0) taken as 0.
pub fn grad_input(params: &ParamVector, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let trace = forward_trace(params, x)?;
    let out_dim = params.arch().output_dim();
    let mut rows = Vec::with_capacity(out_dim);
    for c in 0..out_dim {
        let mut upstream = vec![0.0; out_dim];
        upstream[c] = 1.0;
        rows.push(input_gradient_traced(params, &trace, &upstream));
    }
    Ok(rows)
}

/// Scalarization of the raw output vector used by input-gradient penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalarize {
    /// Pick a single raw output component.
    Output(usize),
    /// Sum of log-softmax outputs over all classes.
    SumLogSoftmax,
}

impl Scalarize {
    /// Gradient of the scalarization with respect to the raw outputs.
    fn upstream(self, logits: &[f64]) -> Vec<f64> {
        match self {
            Scalarize::Output(c) => {
                let mut u = vec![0.0; logits.len()];
                u[c] = 1.0;
                u
            }
            Scalarize::SumLogSoftmax => {
                // d/dz_c [sum_c' (z_c' - C lse(z))] = 1 - C p_c
                let n_classes = logits.len() as f64;
                softmax(logits)
                    .into_iter()
                    .map(|p| 1.0 - n_classes * p)
                    .collect()
            }
        }
    }

    /// Hessian-vector product of the scalarization at the raw outputs.
    fn hess_vec(self, logits: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Scalarize::Output(_) => vec![0.0; logits.len()],
            Scalarize::SumLogSoftmax => {
                let n_classes = logits.len() as f64;
                let p = softmax(logits);
                let pv: f64 = p.iter().zip(v).map(|(pi, vi)| pi * vi).sum();
                p.iter()
                    .zip(v)
                    .map(|(pi, vi)| -n_classes * (pi * vi - pi * pv))
                    .collect()
            }
        }
    }

    /// Value of the scalarization (used by batch evaluators for reporting).
    pub fn value(self, logits: &[f64]) -> f64 {
        match self {
            Scalarize::Output(c) => logits[c],
            Scalarize::SumLogSoftmax => {
                let lse = log_sum_exp(logits);
                logits.iter().map(|z| z - lse).sum()
            }
        }
    }
}

fn mask_to_flags(mask: &[usize], input_dim: usize) -> Result<Vec<bool>> {
    let mut flags = vec![false; input_dim];
    for &j in mask {
        if j >= input_dim {
            return Err(Error::InvalidMask(format!(
                "mask index {j} out of range for input dim {input_dim}"
            )));
        }
        flags[j] = true;
    }
    Ok(flags)
}

/// Masked squared norm of the input gradient of a scalarized output, plus its
/// gradient with respect to the parameters.
///
/// With u(w, x) the scalarized output, returns
/// `g = sum_{j in mask} (du/dx_j)^2` and the exact `dg/dw`, computed by
/// differentiating a forward (tangent) pass in the direction
/// `d = 2 * mask .* grad_x u`. For ReLU the second derivative is taken as 0.
pub fn masked_input_grad_sq(
    params: &ParamVector,
    x: &[f64],
    mask: &[usize],
    scalarize: Scalarize,
) -> Result<(f64, Vec<f64>)> {
    let trace = forward_trace(params, x)?;
    masked_input_grad_sq_traced(params, &trace, mask, scalarize)
}

pub(crate) fn masked_input_grad_sq_traced(
    params: &ParamVector,
    trace: &ForwardTrace,
    mask: &[usize],
    scalarize: Scalarize,
) -> Result<(f64, Vec<f64>)> {
    let arch = params.arch();
    if let Scalarize::Output(c) = scalarize {
        if c >= arch.output_dim() {
            return Err(Error::InvalidShape(format!(
                "scalarized output {c} out of range for output dim {}",
                arch.output_dim()
            )));
        }
    }
    let flags = mask_to_flags(mask, arch.input_dim())?;
    let n_layers = arch.n_layers();
    let logits = trace.output();

    // Reverse pass: v = grad_x of the scalarized output.
    let r_vec = scalarize.upstream(logits);
    let v = input_gradient_traced(params, trace, &r_vec);

    let mut value = 0.0;
    let mut direction = vec![0.0; v.len()];
    for (j, (&vj, &on)) in v.iter().zip(&flags).enumerate() {
        if on {
            value += vj * vj;
            direction[j] = 2.0 * vj;
        }
    }
    if mask.is_empty() {
        return Ok((0.0, vec![0.0; params.len()]));
    }

    // Tangent pass in direction d through the primal network.
    let mut adot: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut zdot: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    adot.push(direction);
    for k in 0..n_layers {
        let out_dim = arch.layer_sizes[k + 1];
        let zeros = vec![0.0; out_dim];
        let zd = affine(params.weights(k), &zeros, &adot[k], out_dim);
        if k < n_layers - 1 {
            let ad = zd
                .iter()
                .zip(&trace.preacts[k])
                .map(|(&t, &z)| arch.activation.prime(z) * t)
                .collect();
            adot.push(ad);
        }
        zdot.push(zd);
    }

    // Adjoint sweep over the (primal, tangent) pair.
    // t = r(z_L) . zdot_L, so zbar_L = H_rho(z_L) zdot_L and zdotbar_L = r.
    let mut grad = vec![0.0; params.len()];
    let mut zbar = scalarize.hess_vec(logits, &zdot[n_layers - 1]);
    let mut zdotbar = r_vec;
    for k in (0..n_layers).rev() {
        accumulate_affine_grads(arch, k, &zbar, &trace.activations[k], &mut grad);
        accumulate_weight_grads(arch, k, &zdotbar, &adot[k], &mut grad);
        if k == 0 {
            break;
        }
        let in_dim = arch.layer_sizes[k];
        let mut abar = vec![0.0; in_dim];
        let mut adotbar = vec![0.0; in_dim];
        affine_transpose_into(params.weights(k), &zbar, in_dim, &mut abar);
        affine_transpose_into(params.weights(k), &zdotbar, in_dim, &mut adotbar);
        let z_prev = &trace.preacts[k - 1];
        let zdot_prev = &zdot[k - 1];
        let mut zbar_prev = vec![0.0; in_dim];
        let mut zdotbar_prev = vec![0.0; in_dim];
        for j in 0..in_dim {
            let d1 = arch.activation.prime(z_prev[j]);
            let d2 = arch.activation.second(z_prev[j]);
            zbar_prev[j] = d1 * abar[j] + d2 * zdot_prev[j] * adotbar[j];
            zdotbar_prev[j] = d1 * adotbar[j];
        }
        zbar = zbar_prev;
        zdotbar = zdotbar_prev;
    }

    // The weight blocks also feed the tangent affine zdot_k = W_k adot_k;
    // that contribution is the `zdotbar x adot` term accumulated above.
    Ok((value, grad))
}

/// Frobenius variant over all raw output components:
/// `g = sum_c sum_{j in mask} (dh_c/dx_j)^2` plus its parameter gradient.
pub fn masked_jacobian_frobenius(
    params: &ParamVector,
    x: &[f64],
    mask: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let trace = forward_trace(params, x)?;
    let out_dim = params.arch().output_dim();
    let mut value = 0.0;
    let mut grad = vec![0.0; params.len()];
    for c in 0..out_dim {
        let (vc, gc) = masked_input_grad_sq_traced(params, &trace, mask, Scalarize::Output(c))?;
        value += vc;
        for (g, gi) in grad.iter_mut().zip(&gc) {
            *g += gi;
        }
    }
    Ok((value, grad))
}
