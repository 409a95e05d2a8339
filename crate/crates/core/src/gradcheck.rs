//! Central finite-difference oracle for verifying analytic gradients.
//!
//! Used only by the test suites; it is independent of every backward pass it
//! checks because it re-runs the forward map at perturbed parameter values.

/// Central finite difference of `f` at `x[i]` with step `h`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error between an analytic derivative and its finite-difference
/// estimate: `|a - n| / (|a| + eps)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

/// Checks every slot of a parameter buffer against central differences.
///
/// `loss` must recompute the scalar objective from the current buffer
/// contents. Returns the worst relative error encountered.
pub fn check_gradient(
    params: &mut [f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let numeric = central_diff(params, i, h, &mut loss);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
