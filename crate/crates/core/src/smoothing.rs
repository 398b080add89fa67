//! Projection of sampled data onto an H^3 ball.
//!
//! `g = argmin |g - f|_{H1}^2 + alpha |g'''|_{L2}^2` with `g(0) = 0`, and
//! `alpha` chosen so that `|g'''|_{L2} = bound` (or `alpha = 0` when `f`
//! already satisfies it). Nonexpansive in the discrete H^1 norm for data
//! whose true value lies in the ball.

use serde::Serialize;

use crate::error::{Error, Result};

/// Banded symmetric positive definite matrix, lower bands stored by row:
/// `band[i][k] = A[i][i - k]`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    band: Vec<Vec<f64>>,
    width: usize,
}

impl BandedSpd {
    pub fn zeros(n: usize, width: usize) -> Self {
        Self {
            band: vec![vec![0.0; width + 1]; n],
            width,
        }
    }

    pub fn n(&self) -> usize {
        self.band.len()
    }

    /// Add `v` to `A[i][j]` (and `A[j][i]`); requires `|i - j| <= width`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.band[r][r - c] += v;
    }

    /// Cholesky solve; errors on a nonpositive pivot.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let p = self.width;
        let mut l = self.band.clone();
        for i in 0..n {
            for k in (0..=p.min(i)).rev() {
                let j = i - k;
                let mut s = l[i][k];
                for m in 1..=(p - k).min(j) {
                    s -= l[i][k + m] * l[j][m];
                }
                if k == 0 {
                    if !(s > 0.0) {
                        return Err(Error::SingularSystem { row: i });
                    }
                    l[i][0] = s.sqrt();
                } else {
                    l[i][k] = s / l[j][0];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            for k in 1..=p.min(i) {
                y[i] -= l[i][k] * y[i - k];
            }
            y[i] /= l[i][0];
        }
        for i in (0..n).rev() {
            for k in 1..=p.min(n - 1 - i) {
                y[i] -= l[i + k][k] * y[i + k];
            }
            y[i] /= l[i][0];
        }
        Ok(y)
    }
}

/// `|g'''|_{L2}` from third differences.
pub fn third_derivative_norm(values: &[f64], step: f64) -> f64 {
    let s: f64 = values
        .windows(4)
        .map(|w| {
            let d = (w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]) / step.powi(3);
            d * d
        })
        .sum();
    (s * step).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub values: Vec<f64>,
    pub alpha: f64,
    /// `|g'''|_{L2}` of the result.
    pub third_norm: f64,
}

fn smooth_with(f: &[f64], step: f64, alpha: f64) -> Result<Vec<f64>> {
    let n = f.len();
    // unknowns g_1..g_{n-1}; g_0 = 0
    let m = n - 1;
    let mut a = BandedSpd::zeros(m, 3);
    let mut rhs = vec![0.0; m];
    let add = |a: &mut BandedSpd, i: usize, j: usize, v: f64| {
        if i > 0 && j > 0 {
            a.add(i - 1, j - 1, v);
        }
    };
    for i in 0..n {
        add(&mut a, i, i, step);
        if i > 0 {
            rhs[i - 1] += step * f[i];
        }
    }
    let inv = 1.0 / step;
    for i in 0..n - 1 {
        let df = f[i + 1] - f[i];
        add(&mut a, i, i, inv);
        add(&mut a, i + 1, i + 1, inv);
        add(&mut a, i + 1, i, -inv);
        if i > 0 {
            rhs[i - 1] -= inv * df;
        }
        rhs[i] += inv * df;
    }
    if alpha > 0.0 {
        let c = alpha / step.powi(5);
        let t = [-1.0, 3.0, -3.0, 1.0];
        for i in 0..n.saturating_sub(3) {
            for (p, tp) in t.iter().enumerate() {
                for (q, tq) in t.iter().enumerate().take(p + 1) {
                    add(&mut a, i + p, i + q, c * tp * tq);
                }
            }
        }
    }
    let g = a.solve(&rhs)?;
    Ok(std::iter::once(0.0).chain(g).collect())
}

/// Project `f` onto `{g : g(0) = 0, |g'''|_{L2} <= bound}` in the H^1 norm.
pub fn project_h3_ball(f: &[f64], step: f64, bound: f64) -> Result<Projection> {
    if f.len() < 4 {
        return Err(Error::invalid("need at least 4 samples"));
    }
    if !(bound > 0.0) || !(step > 0.0) {
        return Err(Error::invalid("bound and step must be positive"));
    }
    let g0 = smooth_with(f, step, 0.0)?;
    let s0 = third_derivative_norm(&g0, step);
    if s0 <= bound {
        return Ok(Projection {
            values: g0,
            alpha: 0.0,
            third_norm: s0,
        });
    }
    let norm_at = |la: f64| -> Result<(Vec<f64>, f64)> {
        let g = smooth_with(f, step, 10f64.powf(la))?;
        let s = third_derivative_norm(&g, step);
        Ok((g, s))
    };
    let (mut lo, mut hi) = (-12.0_f64, 0.0_f64);
    while norm_at(hi)?.1 > bound {
        lo = hi;
        hi += 4.0;
        if hi > 40.0 {
            return Err(Error::invalid("H3 bound below what the constraint g(0) = 0 allows"));
        }
    }
    let mut best = norm_at(hi)?;
    let mut best_la = hi;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let r = norm_at(mid)?;
        if r.1 > bound {
            lo = mid;
        } else {
            hi = mid;
            best = r;
            best_la = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(Projection {
        values: best.0,
        alpha: 10f64.powf(best_la),
        third_norm: best.1,
    })
}
