//! Per-mode optical diffusion problem.
//!
//! For the illumination `phi_k(x)` the fluence is `u_k(y) phi_k(x)` where
//!
//! ```text
//! -(D u')' + (mu_a + lambda_k^2 D) u = 0,   u(0) = 0,   u(H) = 1.
//! ```
//!
//! With the Liouville substitution `v = (D / D(H))^{1/2} u` this becomes
//! `-v'' + kappa v = 0` with `kappa = (sqrt D)'' / sqrt D + mu_a / D + lambda_k^2`,
//! and comparison with the constant-`kappa` problems gives sinh envelopes.
//! A larger `kappa` gives a smaller solution, so the lower envelope is the
//! one built from `max kappa` and the upper envelope from `min kappa`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::medium::{CoefficientProfile, LayeredMedium};
use crate::tridiag;

/// `sinh(s y) / sinh(s h)` for `0 <= y <= h`, without overflow.
pub fn sinh_ratio(s: f64, y: f64, h: f64) -> f64 {
    if s * h < 1e-8 {
        return y / h;
    }
    let num = -(-2.0 * s * y).exp_m1();
    let den = -(-2.0 * s * h).exp_m1();
    (s * (y - h)).exp() * num / den
}

/// `cosh(s y) / sinh(s h)` for `0 <= y <= h`, without overflow.
pub fn cosh_over_sinh(s: f64, y: f64, h: f64) -> f64 {
    let num = 1.0 + (-2.0 * s * y).exp();
    let den = -(-2.0 * s * h).exp_m1();
    (s * (y - h)).exp() * num / den
}

/// Comparison envelopes of one optical mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelopes {
    /// `kappa(y)` at every node.
    pub kappa: CoefficientProfile,
    pub kappa_m: f64,
    pub kappa_big_m: f64,
    /// `None` when `kappa_m <= 0` ("k too small").
    pub bounds: Option<EnvelopePair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    /// `(D(H)/D(y))^{1/2} sinh(sqrt(kappa_M) y) / sinh(sqrt(kappa_M) H)`.
    pub lower: CoefficientProfile,
    /// `(D(H)/D(y))^{1/2} sinh(sqrt(kappa_m) y) / sinh(sqrt(kappa_m) H)`.
    pub upper: CoefficientProfile,
}

impl Envelopes {
    pub fn k_too_small(&self) -> bool {
        self.bounds.is_none()
    }

    /// `kappa` of the lower envelope.
    pub fn kappa_lower(&self) -> f64 {
        self.kappa_big_m
    }
}

/// `kappa(y)` profile for wavenumber `lambda`.
pub fn kappa_profile(medium: &LayeredMedium, lambda: f64) -> Result<CoefficientProfile> {
    let sqrt_d = medium.diffusion.map(f64::sqrt)?;
    let sqrt_d2 = sqrt_d.derivative(2)?;
    let vals = (0..sqrt_d.len())
        .map(|i| {
            sqrt_d2.values()[i] / sqrt_d.values()[i]
                + medium.absorption.values()[i] / medium.diffusion.values()[i]
                + lambda * lambda
        })
        .collect();
    CoefficientProfile::new(*medium.diffusion.grid(), vals)
}

/// Liouville-weighted sinh profile `(D(H)/D(y))^{1/2} sinh(sqrt(kappa) y)/sinh(sqrt(kappa) H)`.
pub fn sinh_envelope(medium: &LayeredMedium, kappa: f64) -> Result<CoefficientProfile> {
    let grid = *medium.grid();
    let h = grid.y_max();
    let d_h = medium.diffusion.last();
    let s = kappa.sqrt();
    let vals = grid
        .nodes()
        .zip(medium.diffusion.values())
        .map(|(y, &d)| (d_h / d).sqrt() * sinh_ratio(s, y, h))
        .collect();
    CoefficientProfile::new(grid, vals)
}

pub fn compute_envelopes_lambda(medium: &LayeredMedium, lambda: f64) -> Result<Envelopes> {
    let kappa = kappa_profile(medium, lambda)?;
    let kappa_m = kappa.min();
    let kappa_big_m = kappa.max();
    let bounds = if kappa_m > 0.0 {
        Some(EnvelopePair {
            lower: sinh_envelope(medium, kappa_big_m)?,
            upper: sinh_envelope(medium, kappa_m)?,
        })
    } else {
        None
    };
    Ok(Envelopes {
        kappa,
        kappa_m,
        kappa_big_m,
        bounds,
    })
}

pub fn compute_envelopes(medium: &LayeredMedium, k: i64) -> Result<Envelopes> {
    compute_envelopes_lambda(medium, medium.wavenumber(k))
}

/// Smallest `k >= 0` whose `kappa_m` is positive, searching up to `k_max`.
pub fn smallest_admissible_mode(medium: &LayeredMedium, k_max: i64) -> Result<Option<i64>> {
    for k in 0..=k_max {
        if kappa_profile(medium, medium.wavenumber(k))?.min() > 0.0 {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalSolution {
    pub k: i64,
    pub lambda_k: f64,
    pub u: CoefficientProfile,
    pub u_prime: CoefficientProfile,
    pub envelopes: Envelopes,
}

impl ModalSolution {
    pub fn kappa_m(&self) -> f64 {
        self.envelopes.kappa_m
    }

    pub fn kappa_big_m(&self) -> f64 {
        self.envelopes.kappa_big_m
    }

    pub fn envelope_lo(&self) -> Option<&CoefficientProfile> {
        self.envelopes.bounds.as_ref().map(|b| &b.lower)
    }

    pub fn envelope_hi(&self) -> Option<&CoefficientProfile> {
        self.envelopes.bounds.as_ref().map(|b| &b.upper)
    }
}

/// Conservative second-order finite differences with harmonic-mean face
/// diffusion; Dirichlet values imposed strongly.
pub fn solve_bvp_lambda(medium: &LayeredMedium, lambda: f64) -> Result<CoefficientProfile> {
    let grid = *medium.grid();
    let n = grid.n_points();
    let h2 = grid.h_step() * grid.h_step();
    let d = medium.diffusion.values();
    let mu = medium.absorption.values();
    let face: Vec<f64> = d.windows(2).map(|w| 2.0 * w[0] * w[1] / (w[0] + w[1])).collect();

    let m = n - 2;
    let mut lower = vec![0.0; m.saturating_sub(1)];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m.saturating_sub(1)];
    let mut rhs = vec![0.0; m];
    for r in 0..m {
        let i = r + 1;
        diag[r] = (face[i - 1] + face[i]) / h2 + mu[i] + lambda * lambda * d[i];
        if r > 0 {
            lower[r - 1] = -face[i - 1] / h2;
        }
        if r + 1 < m {
            upper[r] = -face[i] / h2;
        }
    }
    // u(H) = 1 moves to the right-hand side of the last interior row.
    rhs[m - 1] = face[n - 2] / h2;
    let interior = tridiag::solve(&lower, &diag, &upper, &rhs)?;

    let mut u = Vec::with_capacity(n);
    u.push(0.0);
    u.extend(interior);
    u.push(1.0);
    CoefficientProfile::new(grid, u)
}

/// Solve the mode-`k` problem and attach its envelopes.
pub fn solve_modal_bvp(medium: &LayeredMedium, k: i64) -> Result<ModalSolution> {
    solve_modal_bvp_lambda(medium, k, medium.wavenumber(k))
}

/// Same as [`solve_modal_bvp`] with the wavenumber set directly.
pub fn solve_modal_bvp_lambda(medium: &LayeredMedium, k: i64, lambda: f64) -> Result<ModalSolution> {
    let u = solve_bvp_lambda(medium, lambda)?;
    let u_prime = u.derivative(1)?;
    let envelopes = compute_envelopes_lambda(medium, lambda)?;
    Ok(ModalSolution {
        k,
        lambda_k: lambda,
        u,
        u_prime,
        envelopes,
    })
}

/// Constructive positive lower bound for `u'`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeBound {
    /// Pointwise lower bound for `u'(y)`.
    pub rho: Vec<f64>,
    /// `min_y rho(y)`, attained at `y = 0`.
    pub rho_min: f64,
    /// Smallest computed `u'` on the grid.
    pub observed_min: f64,
    /// `observed_min >= rho_min`.
    pub holds: bool,
}

/// Lower bound for `u'` assembled from the lower envelope:
///
/// ```text
/// D(y) u'(y) >= sqrt(D(H)/|D|_inf) [ sqrt(k) D0 / sinh(sqrt(k) H)
///               + (mu0 + lambda^2 D0) (cosh(sqrt(k) y) - 1) / (sqrt(k) sinh(sqrt(k) H)) ]
/// ```
///
/// divided by `|D|_inf`, with `k` the lower-envelope `kappa` and `D0`, `mu0`
/// the minima of the coefficients on the grid.
pub fn derivative_lower_bound(medium: &LayeredMedium, solution: &ModalSolution) -> Result<DerivativeBound> {
    if solution.envelopes.k_too_small() {
        return Err(Error::KTooSmall {
            k: solution.k,
            kappa_m: solution.kappa_m(),
        });
    }
    let grid = medium.grid();
    let h = grid.y_max();
    let d_inf = medium.diffusion.max_abs();
    let d0 = medium.diffusion.min();
    let mu0 = medium.absorption.min();
    let lam2 = solution.lambda_k * solution.lambda_k;
    let s = solution.envelopes.kappa_lower().sqrt();
    let scale = (medium.diffusion.last() / d_inf).sqrt();
    let inv_sinh = cosh_over_sinh(s, 0.0, h) / 2.0;
    let rho: Vec<f64> = grid
        .nodes()
        .map(|y| {
            let cosh_term = cosh_over_sinh(s, y, h) - 2.0 * inv_sinh;
            scale * (s * d0 * 2.0 * inv_sinh + (mu0 + lam2 * d0) * cosh_term / s) / d_inf
        })
        .collect();
    let rho_min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let observed_min = solution.u_prime.min();
    Ok(DerivativeBound {
        rho,
        rho_min,
        observed_min,
        holds: observed_min >= rho_min,
    })
}

/// Absorbed energy `h = mu_a u_k` of one illumination.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalDatum {
    pub k: i64,
    pub h: CoefficientProfile,
    pub h_prime: CoefficientProfile,
}

impl InternalDatum {
    /// Wrap measured or recovered samples, differentiating numerically.
    pub fn from_samples(k: i64, h: CoefficientProfile) -> Result<Self> {
        let h_prime = h.derivative(1)?;
        Ok(Self { k, h, h_prime })
    }
}

pub fn internal_datum(medium: &LayeredMedium, solution: &ModalSolution) -> Result<InternalDatum> {
    let h = medium.absorption.zip_with(&solution.u, |mu, u| mu * u)?;
    InternalDatum::from_samples(solution.k, h)
}

/// `h_j = mu_a u_{k_j}` for two modes `k1 < k2`, both with `kappa_m > 0`.
pub fn make_internal_data(medium: &LayeredMedium, k1: i64, k2: i64) -> Result<(InternalDatum, InternalDatum)> {
    if k1 >= k2 {
        return Err(Error::invalid(format!("need k1 < k2, got k1={k1}, k2={k2}")));
    }
    let mut out = Vec::with_capacity(2);
    for k in [k1, k2] {
        let sol = solve_modal_bvp(medium, k)?;
        if sol.envelopes.k_too_small() {
            return Err(Error::KTooSmall {
                k,
                kappa_m: sol.kappa_m(),
            });
        }
        out.push(internal_datum(medium, &sol)?);
    }
    let h2 = out.pop().expect("two data");
    let h1 = out.pop().expect("two data");
    Ok((h1, h2))
}

/// Max-norm error against an exact profile.
pub fn max_error(profile: &CoefficientProfile, exact: impl Fn(f64) -> f64) -> f64 {
    profile
        .grid()
        .nodes()
        .zip(profile.values())
        .map(|(y, v)| (v - exact(y)).abs())
        .fold(0.0, f64::max)
}

/// Weighted max-norm of the difference, `max |w (a - b)|`.
pub fn weighted_max_diff(weight: &[f64], a: &[f64], b: &[f64]) -> f64 {
    weight
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| (w * (x - y)).abs())
        .fold(0.0, f64::max)
}
