//! Dense vector helpers and a matrix-free conjugate gradient.

use alloc::vec;
use alloc::vec::Vec;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
}

/// Why a conjugate gradient run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStop {
    Converged,
    MaxIterations,
    /// Encountered a direction with `pᵀ A p ≤ 0`.
    NonPositiveCurvature,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub stop: CgStop,
    /// Residual norm before the first iteration and after each one.
    pub residual_history: Vec<f64>,
}

impl CgOutcome {
    pub fn converged(&self) -> bool {
        self.stop == CgStop::Converged
    }
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` given as a closure.
///
/// `x` holds the initial guess on entry. The run stops once
/// `‖b − A x‖ ≤ tol · ‖b‖`, after `max_iter` iterations, or on non-positive
/// curvature (leaving the last iterate in `x`).
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            stop: CgStop::Converged,
            residual_history: vec![0.0],
        };
    }
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut history = vec![libm::sqrt(rr)];
    let target = tol * b_norm;
    let mut iterations = 0;
    let mut stop = CgStop::MaxIterations;
    if libm::sqrt(rr) <= target {
        stop = CgStop::Converged;
    } else {
        while iterations < max_iter {
            apply(&p, &mut ap);
            let curvature = dot(&p, &ap);
            if !(curvature > 0.0) {
                stop = CgStop::NonPositiveCurvature;
                break;
            }
            let step = rr / curvature;
            axpy(step, &p, x);
            axpy(-step, &ap, &mut r);
            iterations += 1;
            let rr_new = dot(&r, &r);
            history.push(libm::sqrt(rr_new));
            if libm::sqrt(rr_new) <= target {
                stop = CgStop::Converged;
                break;
            }
            let beta = rr_new / rr;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
        }
    }
    CgOutcome {
        iterations,
        relative_residual: history.last().copied().unwrap_or(0.0) / b_norm,
        stop,
        residual_history: history,
    }
}
