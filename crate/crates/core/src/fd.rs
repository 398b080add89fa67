//! Finite differences and quadrature on uniform grids.
//!
//! Derivatives are second-order accurate everywhere: centered stencils in the
//! interior and one-sided second-order stencils at the endpoints.

use crate::error::{Error, Result};

/// Minimum number of samples needed for a second-order derivative of `order`.
pub fn min_points(order: usize) -> usize {
    match order {
        0 => 1,
        1 => 3,
        2 => 4,
        _ => 6,
    }
}

/// Nodal derivative of order 0..=3 of uniformly spaced samples.
pub fn derivative(values: &[f64], step: f64, order: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if order > 3 {
        return Err(Error::invalid(format!("derivative order {order} not supported")));
    }
    if n < min_points(order) {
        return Err(Error::invalid(format!(
            "order-{order} derivative needs at least {} samples, got {n}",
            min_points(order)
        )));
    }
    let f = values;
    let out = match order {
        0 => f.to_vec(),
        1 => {
            let mut d = vec![0.0; n];
            d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * step);
            d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * step);
            for i in 1..n - 1 {
                d[i] = (f[i + 1] - f[i - 1]) / (2.0 * step);
            }
            d
        }
        2 => {
            let h2 = step * step;
            let mut d = vec![0.0; n];
            d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
            d[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
            for i in 1..n - 1 {
                d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
            }
            d
        }
        _ => {
            let h3 = 2.0 * step * step * step;
            let mut d = vec![0.0; n];
            for (i, di) in d.iter_mut().enumerate() {
                *di = if i < 2 {
                    (-5.0 * f[i] + 18.0 * f[i + 1] - 24.0 * f[i + 2] + 14.0 * f[i + 3]
                        - 3.0 * f[i + 4])
                        / h3
                } else if i + 2 >= n {
                    (5.0 * f[i] - 18.0 * f[i - 1] + 24.0 * f[i - 2] - 14.0 * f[i - 3]
                        + 3.0 * f[i - 4])
                        / h3
                } else {
                    (f[i + 2] - 2.0 * f[i + 1] + 2.0 * f[i - 1] - f[i - 2]) / h3
                };
            }
            d
        }
    };
    Ok(out)
}

/// One-sided second-order first derivative at the last sample.
pub fn derivative_at_end(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * step)
}

/// One-sided second-order first derivative at the first sample.
pub fn derivative_at_start(values: &[f64], step: f64) -> f64 {
    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step)
}

/// Composite trapezoid weights for `n` nodes.
pub fn trapezoid_weights(n: usize, step: f64) -> Vec<f64> {
    let mut w = vec![step; n];
    if n > 0 {
        w[0] = 0.5 * step;
        w[n - 1] = 0.5 * step;
    }
    if n == 1 {
        w[0] = 0.0;
    }
    w
}

/// Composite trapezoid rule.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    step * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Trapezoid rule of `f(x)^2`.
pub fn trapezoid_sq(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().map(|v| v * v).sum();
    step * (inner + 0.5 * (values[0] * values[0] + values[n - 1] * values[n - 1]))
}

/// `out[i] = integral from x_i to x_{n-1}` by the trapezoid rule.
pub fn cumulative_trapezoid_from_end(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in (0..n.saturating_sub(1)).rev() {
        out[i] = out[i + 1] + 0.5 * step * (values[i] + values[i + 1]);
    }
    out
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Discrete C^1 norm: `max |f| + max |f'|`.
pub fn c1_norm(values: &[f64], step: f64) -> Result<f64> {
    Ok(max_abs(values) + max_abs(&derivative(values, step, 1)?))
}

/// Discrete Sobolev norm `H^order` (order <= 3) with trapezoid quadrature.
pub fn sobolev_norm(values: &[f64], step: f64, order: usize) -> Result<f64> {
    let mut sum = 0.0;
    for j in 0..=order {
        sum += trapezoid_sq(&derivative(values, step, j)?, step);
    }
    Ok(sum.sqrt())
}
