//! Shared oracle helpers for the integration suites.

#![allow(dead_code)]

/// Central finite difference with step 1e-5.
pub fn central_diff<F: FnMut(f64) -> f64>(mut f: F, x0: f64) -> f64 {
    let h = 1e-5;
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Asserts per-coordinate relative agreement: |a - b| <= tol * max(|a|, |b|)
/// with a small absolute floor for near-zero coordinates.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (i, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(b.abs());
        let err = (a - b).abs();
        assert!(
            err <= tol * scale + 1e-9,
            "{what}: coordinate {i}: analytic {a} vs numeric {b} (err {err})"
        );
    }
}

/// Finite-difference gradient of a scalar function of a flat vector.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut grad = vec![0.0; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + h;
        let hi = f(&buf);
        buf[i] = x[i] - h;
        let lo = f(&buf);
        buf[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * h);
    }
    grad
}
