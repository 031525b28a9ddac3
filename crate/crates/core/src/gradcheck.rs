//! Finite-difference gradient verification helpers, used by the unit tests
//! of every trainable module rather than duplicated per test file.

/// Central finite-difference derivative of `f` with respect to each entry
/// of `x`, using step `h` (perturbing one coordinate at a time).
pub fn central_diff<F>(mut f: F, x: &mut [f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(x);
        x[i] = orig - h;
        let minus = f(x);
        x[i] = orig;
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Relative error with an absolute floor: |a-b| / max(|a|, |b|, floor).
/// The floor keeps near-zero gradients from inflating the ratio with
/// finite-difference noise.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error across matched gradient entries.
/// Panics on length mismatch or non-finite entries — both are bugs.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(a.is_finite(), "analytic gradient [{i}] not finite: {a}");
        assert!(n.is_finite(), "numeric gradient [{i}] not finite: {n}");
        worst = worst.max(rel_err(a, n, floor));
    }
    worst
}

/// Standard step and floor used by the tiny-model gradient checks.
pub const FD_STEP: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-6;
