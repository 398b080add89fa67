//! Damped conjugate gradients on the normal equations (CGLS form).
//!
//! Minimizes `|A x - b|^2 + eps |x|^2` using only products with `A` and
//! `A^T`.

use serde::Serialize;

use crate::error::Result;

/// A linear map known only through its action and the action of its transpose.
pub trait LinearOperator {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CgneOptions {
    pub max_iterations: usize,
    /// Stop when `|A^T r - eps x| <= tolerance |A^T b|` or `|r| <= tolerance |b|`.
    pub tolerance: f64,
    pub damping: f64,
}

impl Default for CgneOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
            damping: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CgneOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `|A x - b| / |b|` (0 when `b = 0`).
    pub relative_residual: f64,
    /// `|A^T (b - A x) - eps x| / |A^T b|`.
    pub relative_normal_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn solve(op: &impl LinearOperator, b: &[f64], options: &CgneOptions) -> Result<CgneOutcome> {
    assert_eq!(b.len(), op.n_rows(), "right-hand side length");
    let eps = options.damping;
    let n = op.n_cols();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgneOutcome {
            x,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
            relative_normal_residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut s = op.apply_transpose(&r)?;
    let s0 = dot(&s, &s).sqrt();
    let mut p = s.clone();
    let mut gamma = s0 * s0;
    let mut iterations = 0;
    let mut converged = false;
    let mut r_norm = b_norm;
    let mut s_norm = s0;
    while iterations < options.max_iterations {
        if s_norm <= options.tolerance * s0 || r_norm <= options.tolerance * b_norm {
            converged = true;
            break;
        }
        let q = op.apply(&p)?;
        let delta = dot(&q, &q) + eps * dot(&p, &p);
        if delta <= 0.0 {
            break;
        }
        let alpha = gamma / delta;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        s = op.apply_transpose(&r)?;
        axpy(-eps, &x, &mut s);
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        iterations += 1;
        r_norm = dot(&r, &r).sqrt();
        s_norm = gamma.sqrt();
    }
    if !converged {
        converged = s_norm <= options.tolerance * s0 || r_norm <= options.tolerance * b_norm;
    }
    Ok(CgneOutcome {
        x,
        iterations,
        converged,
        relative_residual: r_norm / b_norm,
        relative_normal_residual: s_norm / s0,
    })
}
