//! Quasi-Newton maximization used by the likelihood estimators.
//!
//! BFGS on the inverse Hessian with an Armijo backtracking line search. The
//! initial metric is the inverse of the negated finite-difference Hessian of
//! the analytic gradient when that matrix is positive definite. Close to the
//! optimum, function differences fall below floating-point resolution and the
//! Armijo test stops being informative; a few Newton steps accepted on
//! gradient-norm decrease finish the job.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Convergence when the max-norm of the gradient falls below this.
    pub gradient_tolerance: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimResult {
    pub fn gradient_max_norm(&self) -> f64 {
        max_norm(&self.gradient)
    }
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_NEWTON_STEPS: usize = 25;
const RESOLVABLE_GAIN: f64 = 1e-11;

/// Central-difference Hessian of an analytic gradient, symmetrized.
pub fn fd_hessian<F>(grad: &mut F, x: &[f64]) -> DMatrix<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        grad(&xp, &mut gp);
        xp[j] = x[j] - step;
        grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Inverse of `-hessian` when it is positive definite.
pub(crate) fn neg_inverse(hessian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if hessian.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let neg = -hessian.clone();
    neg.cholesky().map(|c| c.inverse())
}

/// Maximizes `f`, which returns the objective and writes its gradient.
pub fn maximize<F>(mut f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = vec![0.0; n];
    let mut value = f(x.as_slice(), &mut g);
    let mut iterations = 0;

    if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return OptimResult {
            x: x0.to_vec(),
            value,
            gradient: g,
            iterations,
            converged: false,
        };
    }
    if n == 0 {
        return OptimResult {
            x: vec![],
            value,
            gradient: g,
            iterations,
            converged: true,
        };
    }

    let identity_metric = |g: &[f64]| DMatrix::<f64>::identity(n, n) / max_norm(g).max(1.0);
    let mut h_inv =
        neg_inverse(&fd_hessian(&mut f, x.as_slice())).unwrap_or_else(|| identity_metric(&g));
    let mut fresh_metric = true;
    let mut gn = vec![0.0; n];

    while iterations < opts.max_iterations && max_norm(&g) >= opts.gradient_tolerance {
        let gv = DVector::from_column_slice(&g);
        let mut dir = &h_inv * &gv;
        let mut slope = gv.dot(&dir);
        if !(slope > 0.0) {
            h_inv = identity_metric(&g);
            fresh_metric = true;
            dir = &h_inv * &gv;
            slope = gv.dot(&dir);
        }
        // predicted gain below the resolution of the objective
        if slope < RESOLVABLE_GAIN * (1.0 + value.abs()) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = &x + &dir * t;
            let vn = f(xn.as_slice(), &mut gn);
            if vn.is_finite()
                && gn.iter().all(|v| v.is_finite())
                && vn >= value + ARMIJO_C1 * t * slope
            {
                accepted = Some((xn, vn));
                break;
            }
            t *= 0.5;
        }

        let Some((xn, vn)) = accepted else {
            if fresh_metric {
                break;
            }
            h_inv = identity_metric(&g);
            fresh_metric = true;
            continue;
        };
        iterations += 1;
        fresh_metric = false;

        // BFGS update in minimization convention: y = grad(-f)_new - grad(-f)_old
        let s = &xn - &x;
        let y = DVector::from_iterator(n, g.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // (I - rho s y')H(I - rho y s') + rho s s'
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }

        x = xn;
        value = vn;
        g.copy_from_slice(&gn);
    }

    if max_norm(&g) >= opts.gradient_tolerance {
        newton_polish(&mut f, &mut x, &mut value, &mut g, &mut iterations, opts);
    }

    OptimResult {
        converged: max_norm(&g) < opts.gradient_tolerance,
        x: x.as_slice().to_vec(),
        value,
        gradient: g,
        iterations,
    }
}

fn newton_polish<F>(
    f: &mut F,
    x: &mut DVector<f64>,
    value: &mut f64,
    g: &mut Vec<f64>,
    iterations: &mut usize,
    opts: &OptimOptions,
) where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut gn = vec![0.0; n];
    for _ in 0..MAX_NEWTON_STEPS {
        if *iterations >= opts.max_iterations || max_norm(g) < opts.gradient_tolerance {
            return;
        }
        let Some(cov) = neg_inverse(&fd_hessian(f, x.as_slice())) else {
            return;
        };
        let step = cov * DVector::from_column_slice(g);
        let current = max_norm(g);
        let tolerance = 1e-10 * (1.0 + value.abs());
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let xn = &*x + &step * t;
            let vn = f(xn.as_slice(), &mut gn);
            if vn.is_finite() && vn >= *value - tolerance && max_norm(&gn) < current {
                *x = xn;
                *value = vn;
                g.copy_from_slice(&gn);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        *iterations += 1;
        if !moved {
            return;
        }
    }
}
