#![allow(dead_code)]

use num_complex::Complex64;
use threshold_choice::TransformKind;

/// Relative error, exact zero only matching exact zero.
pub fn rel_err(analytic: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        return if analytic == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (analytic - reference).abs() / reference.abs()
}

/// Central difference with one Richardson step, error `O(h^4)`.
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Transform magnitude for `x > 0`, written directly from the defining formulas
/// in complex arithmetic.
fn magnitude(kind: TransformKind, a: Complex64, x: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    match kind {
        TransformKind::Linear => x,
        TransformKind::Htf => x - a,
        TransformKind::Stf1 => {
            // tanh for Re z > 0 without overflow
            let e = (-2.0 * x / a).exp();
            x - a * (one - e) / (one + e)
        }
        TransformKind::Stf2 => x * (one - one / ((x / a) * (x / a) + one).sqrt()),
        TransformKind::Power => (a * x.ln()).exp(),
        TransformKind::Reverting => x / (one + (a - x).exp()),
    }
}

const CSTEP: f64 = 1e-30;

/// Complex-step partial derivatives `(d/d dt, d/d alpha)` of the transform at
/// `dt != 0`; for the hard threshold `|dt| > alpha` is required.
pub fn complex_step_gradient(kind: TransformKind, alpha: f64, dt: f64) -> (f64, f64) {
    let x = dt.abs();
    let s = dt.signum();
    let a = Complex64::new(alpha, 0.0);
    let d_x = magnitude(kind, a, Complex64::new(x, CSTEP)).im / CSTEP;
    let d_a = magnitude(kind, Complex64::new(alpha, CSTEP), Complex64::new(x, 0.0)).im / CSTEP;
    (d_x, s * d_a)
}
