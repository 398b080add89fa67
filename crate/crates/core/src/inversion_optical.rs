//! Recovery of `(D, mu_a)` from two internal data `h_j = mu_a u_{k_j}`.
//!
//! With `h = h2 / h1 = u2 / u1` and `F = D u1^2`,
//!
//! ```text
//! -(F h')' + (lambda2^2 - lambda1^2) F h = 0,
//! ```
//!
//! so `G = F h'` obeys `G' = Lambda (h / h') G`. Normalizing with the
//! calibration value `D(H)` (`u1(H) = 1`):
//!
//! ```text
//! F(y) = D(H) h'(H) / h'(y) exp(-Lambda int_y^H h / h').
//! ```
//!
//! `v = 1 / u1` then solves `-(F v')' - lambda1^2 F v = h1` with
//! `v(H) = 1` and `F v'(H) = -D(H) u1'(H)`, which is integrated backward
//! from `y = H`. Finally `D = F v^2` and `mu_a = h1 v`.
//!
//! Near `y = 0` both `u1` and `h'` vanish and `v` grows like `1 / y`;
//! nodes where the march leaves the representable range are flagged
//! untrusted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::medium::{CoefficientProfile, LayeredMedium};
use crate::optical::{compute_envelopes, InternalDatum};

#[derive(Debug, Clone, PartialEq)]
pub struct RatioData {
    pub h: CoefficientProfile,
    pub h_prime: CoefficientProfile,
    /// `lim_{y -> 0} h = h2'(0) / h1'(0)`.
    pub h_at_0: f64,
    /// Envelope lower bound for `h'` (needs the medium).
    pub lower_slope: Option<f64>,
    /// First node of the suffix `[i0, N]` on which `h' > 0`.
    pub valid_from: usize,
}

/// How to treat data that violate the sign conditions near `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// Any non-positive `h1` or `h'` on `(0, H]` is an error.
    #[default]
    Strict,
    /// Keep the longest suffix on which the conditions hold.
    Suffix,
}

fn lhopital_ratio(h1: &InternalDatum, h2: &InternalDatum) -> Result<f64> {
    let step = h1.h.grid().h_step();
    let d1 = fd::derivative_at_start(h1.h.values(), step);
    let d2 = fd::derivative_at_start(h2.h.values(), step);
    if !(d1 > 0.0) {
        return Err(Error::DataInconsistency { index: 0 });
    }
    Ok(d2 / d1)
}

/// Nodes in the least-squares fit behind the ghost value at `y = H`.
const GHOST_WINDOW: usize = 8;

/// Weights `w_j` with `sum_j w_j f(-j) = p(1)`, `p` the least-squares cubic
/// through `f(0), f(-1), .., f(-(m-1))`.
#[allow(clippy::needless_range_loop)]
fn cubic_extrapolation_weights(m: usize) -> Vec<f64> {
    let mut g = [[0.0f64; 4]; 4];
    for j in 0..m {
        let x = -(j as f64);
        for r in 0..4 {
            for c in 0..4 {
                g[r][c] += x.powi(r as i32) * x.powi(c as i32);
            }
        }
    }
    // z = G^-1 (1, 1, 1, 1)^T by Gauss-Jordan; G is SPD and tiny.
    let mut a = g;
    let mut z = [1.0f64; 4];
    for col in 0..4 {
        let p = a[col][col];
        for c in 0..4 {
            a[col][c] /= p;
        }
        z[col] /= p;
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for c in 0..4 {
                    a[r][c] -= f * a[col][c];
                }
                z[r] -= f * z[col];
            }
        }
    }
    (0..m)
        .map(|j| {
            let x = -(j as f64);
            (0..4).map(|r| z[r] * x.powi(r as i32)).sum()
        })
        .collect()
}

/// `h = h2 / h1` and `h'`, rejecting inconsistent data.
pub fn build_ratio(h1: &InternalDatum, h2: &InternalDatum) -> Result<RatioData> {
    build_ratio_with(h1, h2, RatioMode::Strict)
}

pub fn build_ratio_with(h1: &InternalDatum, h2: &InternalDatum, mode: RatioMode) -> Result<RatioData> {
    h1.h.check_same_grid(&h2.h)?;
    let grid = *h1.h.grid();
    let n = grid.n_points();
    let a = h1.h.values();
    let b = h2.h.values();
    let last_bad = (1..n).rev().find(|&i| !(a[i] > 0.0));
    let start = match (last_bad, mode) {
        (None, _) => 1,
        (Some(i), RatioMode::Strict) => return Err(Error::DataInconsistency { index: i }),
        (Some(i), RatioMode::Suffix) if i + 3 < n => i + 1,
        (Some(i), RatioMode::Suffix) => return Err(Error::DataInconsistency { index: i }),
    };
    let h_at_0 = if start == 1 {
        match lhopital_ratio(h1, h2) {
            Ok(v) => v,
            Err(e) if mode == RatioMode::Strict => return Err(e),
            Err(_) => b[1] / a[1],
        }
    } else {
        b[start] / a[start]
    };
    let mut h = vec![0.0; n];
    for i in start..n {
        h[i] = b[i] / a[i];
    }
    for v in h.iter_mut().take(start) {
        *v = h_at_0;
    }
    let step = grid.h_step();
    let mut hp = fd::derivative(&h, step, 1)?;
    // Central difference with a ghost value at y = H, so the end node
    // carries the same O(h^2) error as the interior. F(H) is pinned; any
    // mismatch would show up as a jump in F and an O(h) error in F'(H).
    let m = GHOST_WINDOW.min(n - start);
    if m >= 4 {
        let w = cubic_extrapolation_weights(m);
        let ghost: f64 = w.iter().enumerate().map(|(j, wj)| wj * h[n - 1 - j]).sum();
        hp[n - 1] = (ghost - h[n - 2]) / (2.0 * step);
    }
    // h'(0) = 0: both modes share u''(0) / u'(0) = -D'(0) / (2 D(0)).
    for v in hp.iter_mut().take(start) {
        *v = 0.0;
    }
    if start > 1 {
        // Neighbours of the cut see the held value; use one-sided differences.
        for i in start..(start + 1).min(n - 2) {
            hp[i] = (-3.0 * h[i] + 4.0 * h[i + 1] - h[i + 2]) / (2.0 * step);
        }
    }
    let last_flat = (start..n).rev().find(|&i| !(hp[i] > 0.0));
    let valid_from = match (last_flat, mode) {
        (None, _) => start,
        (Some(i), RatioMode::Strict) => {
            return Err(Error::SingularIntegrand { index: i, value: hp[i] });
        }
        (Some(i), RatioMode::Suffix) if i + 3 < n => i + 1,
        (Some(i), RatioMode::Suffix) => return Err(Error::SingularIntegrand { index: i, value: hp[i] }),
    };
    Ok(RatioData {
        h: CoefficientProfile::new(grid, h)?,
        h_prime: CoefficientProfile::new(grid, hp)?,
        h_at_0,
        lower_slope: None,
        valid_from,
    })
}

/// Envelope lower bound for `h'`:
/// `Lambda min_{y > 0} D^-1(y) upper1^-2(y) int_0^y D lower1 lower2 ds`.
pub fn ratio_slope_lower_bound(medium: &LayeredMedium, k1: i64, k2: i64) -> Result<f64> {
    let b = ratio_slope_bound_profile(medium, k1, k2)?;
    Ok(b[1..].iter().copied().fold(f64::INFINITY, f64::min))
}

/// Pointwise form of [`ratio_slope_lower_bound`]: `h'(y) >= b(y)`, `b(0) = 0`.
pub fn ratio_slope_bound_profile(medium: &LayeredMedium, k1: i64, k2: i64) -> Result<Vec<f64>> {
    let e1 = compute_envelopes(medium, k1)?;
    let e2 = compute_envelopes(medium, k2)?;
    let (Some(b1), Some(b2)) = (e1.bounds.as_ref(), e2.bounds.as_ref()) else {
        let k = if e1.k_too_small() { k1 } else { k2 };
        let kappa_m = if e1.k_too_small() { e1.kappa_m } else { e2.kappa_m };
        return Err(Error::KTooSmall { k, kappa_m });
    };
    let lam2 = medium.wavenumber(k2).powi(2) - medium.wavenumber(k1).powi(2);
    let d = medium.diffusion.values();
    let step = medium.grid().h_step();
    let integrand: Vec<f64> = (0..d.len()).map(|i| d[i] * b1.lower.values()[i] * b2.lower.values()[i]).collect();
    let mut acc = 0.0;
    let mut out = vec![0.0; d.len()];
    for i in 1..d.len() {
        acc += 0.5 * step * (integrand[i - 1] + integrand[i]);
        let up = b1.upper.values()[i];
        out[i] = lam2 * acc / (d[i] * up * up);
    }
    Ok(out)
}

impl RatioData {
    pub fn with_lower_slope(mut self, medium: &LayeredMedium, k1: i64, k2: i64) -> Result<Self> {
        self.lower_slope = Some(ratio_slope_lower_bound(medium, k1, k2)?);
        Ok(self)
    }

    /// Move `valid_from` past the last node where `h' < floor`.
    pub fn screen_slope(&mut self, floor: &[f64]) -> Result<()> {
        let hp = self.h_prime.values();
        if floor.len() != hp.len() {
            return Err(Error::structural(format!("slope floor has {} values, grid has {}", floor.len(), hp.len())));
        }
        let n = hp.len();
        if let Some(i) = (self.valid_from..n).rev().find(|&i| hp[i] < floor[i]) {
            if i + 3 >= n {
                return Err(Error::SingularIntegrand { index: i, value: hp[i] });
            }
            self.valid_from = i + 1;
        }
        Ok(())
    }
}

/// Discrete residual of `-(F h')' + Lambda F h` at interior nodes
/// (conservative form, arithmetic face averages of `F`); zero at the ends.
pub fn verify_ratio_ode(ratio: &RatioData, f_true: &CoefficientProfile, lambda1: f64, lambda2: f64) -> Result<CoefficientProfile> {
    ratio.h.check_same_grid(f_true)?;
    let grid = *f_true.grid();
    let step = grid.h_step();
    let f = f_true.values();
    let h = ratio.h.values();
    let lam = lambda2 * lambda2 - lambda1 * lambda1;
    let n = f.len();
    let mut r = vec![0.0; n];
    for i in 1..n - 1 {
        let fp = 0.5 * (f[i] + f[i + 1]);
        let fm = 0.5 * (f[i - 1] + f[i]);
        let flux = (fp * (h[i + 1] - h[i]) - fm * (h[i] - h[i - 1])) / (step * step);
        r[i] = -flux + lam * f[i] * h[i];
    }
    CoefficientProfile::new(grid, r)
}

/// `F = D u1^2` from the ratio, normalized by `F(H) = D(H)`. Nodes below
/// `ratio.valid_from` are set to zero.
pub fn reconstruct_f(ratio: &RatioData, lambda1: f64, lambda2: f64, d_h: f64) -> Result<CoefficientProfile> {
    if !(d_h > 0.0) {
        return Err(Error::invalid(format!("calibration D(H) must be positive, got {d_h}")));
    }
    let grid = *ratio.h.grid();
    let n = grid.n_points();
    let step = grid.h_step();
    let h = ratio.h.values();
    let hp = ratio.h_prime.values();
    let i0 = ratio.valid_from.max(1);
    if let Some(i) = (i0..n).find(|&i| !(hp[i] > 0.0)) {
        return Err(Error::SingularIntegrand { index: i, value: hp[i] });
    }
    let lam = lambda2 * lambda2 - lambda1 * lambda1;
    let g_h = d_h * hp[n - 1];
    let mut f = vec![0.0; n];
    let mut integral = 0.0;
    f[n - 1] = d_h;
    for i in (i0..n - 1).rev() {
        integral += 0.5 * step * (h[i] / hp[i] + h[i + 1] / hp[i + 1]);
        f[i] = g_h * (-lam * integral).exp() / hp[i];
    }
    CoefficientProfile::new(grid, f)
}

/// Calibration values at `y = H`, assumed known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(rename = "D_H")]
    pub d_h: f64,
    #[serde(rename = "D_prime_H")]
    pub d_prime_h: f64,
    /// Accepted for completeness; the reconstruction does not use it.
    #[serde(rename = "mu_prime_H", default)]
    pub mu_prime_h: Option<f64>,
}

impl Calibration {
    pub fn new(d_h: f64, d_prime_h: f64) -> Self {
        Self {
            d_h,
            d_prime_h,
            mu_prime_h: None,
        }
    }

    /// Exact values of a known medium.
    pub fn from_medium(medium: &LayeredMedium) -> Self {
        let step = medium.grid().h_step();
        Self {
            d_h: medium.diffusion.last(),
            d_prime_h: fd::derivative_at_end(medium.diffusion.values(), step),
            mu_prime_h: Some(fd::derivative_at_end(medium.absorption.values(), step)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalReconstruction {
    pub f: CoefficientProfile,
    pub u_rec: CoefficientProfile,
    pub d_rec: CoefficientProfile,
    pub mu_rec: CoefficientProfile,
    pub calib: Calibration,
    /// Per-node flag; untrusted nodes hold the values of the deepest
    /// trusted node.
    pub trusted: Vec<bool>,
}

impl OpticalReconstruction {
    /// Deepest trusted node, i.e. the smallest `y` with all of `[y, H]` trusted.
    pub fn trusted_from(&self) -> usize {
        self.trusted.iter().position(|&t| t).unwrap_or(self.trusted.len())
    }

    /// `y` of the shallowest untrusted node, if any.
    pub fn truncation_depth(&self) -> Option<f64> {
        let i = self.trusted_from();
        (i > 0).then(|| self.f.grid().y(i - 1))
    }
}

/// Largest admissible `v = 1/u1` before the node is declared untrusted.
pub fn v_ceiling() -> f64 {
    1.0 / f64::EPSILON.sqrt()
}

/// Backward march for `v = 1 / u1` and the coefficient formulas.
pub fn reconstruct_coefficients(
    f: &CoefficientProfile,
    h1: &InternalDatum,
    lambda1: f64,
    calib: Calibration,
) -> Result<OpticalReconstruction> {
    f.check_same_grid(&h1.h)?;
    let grid = *f.grid();
    let n = grid.n_points();
    let step = grid.h_step();
    let fv = f.values();
    let hv = h1.h.values();
    if !(calib.d_h > 0.0) {
        return Err(Error::invalid("calibration D(H) must be positive"));
    }
    if !(hv[n - 1] > 0.0) || !(fv[n - 1] > 0.0) {
        return Err(Error::DataInconsistency { index: n - 1 });
    }
    let lam2 = lambda1 * lambda1;
    let f_prime_h = fd::derivative_at_end(fv, step);
    let u_prime_h = (f_prime_h - calib.d_prime_h) / (2.0 * calib.d_h);
    let ceiling = v_ceiling();

    let mut v = vec![0.0; n];
    let mut trusted = vec![false; n];
    v[n - 1] = 1.0;
    trusted[n - 1] = true;
    let mut q = -calib.d_h * u_prime_h;
    let half = 0.5 * step;
    let denom = 1.0 + half * half * lam2;
    for i in (1..n - 1).rev() {
        let (f0, f1) = (fv[i], fv[i + 1]);
        if !(f0 > 0.0) {
            break;
        }
        // Implicit trapezoid for v' = q/F, q' = -h1 - lambda1^2 F v.
        let a = v[i + 1] - half * q / f1;
        let b = q + half * (hv[i] + hv[i + 1]) + half * lam2 * f1 * v[i + 1];
        let vi = (a - half * b / f0) / denom;
        let qi = b + half * lam2 * f0 * vi;
        if !(vi.is_finite() && vi > 0.0 && vi <= ceiling && qi.is_finite()) {
            break;
        }
        v[i] = vi;
        q = qi;
        trusted[i] = true;
    }
    let i0 = trusted.iter().position(|&t| t).unwrap_or(n - 1);
    let mut u = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut mu = vec![0.0; n];
    for i in i0..n {
        u[i] = 1.0 / v[i];
        d[i] = fv[i] * v[i] * v[i];
        mu[i] = hv[i] * v[i];
    }
    for i in 0..i0 {
        u[i] = if i == 0 { 0.0 } else { u[i0] };
        d[i] = d[i0];
        mu[i] = mu[i0];
    }
    Ok(OpticalReconstruction {
        f: f.clone(),
        u_rec: CoefficientProfile::new(grid, u)?,
        d_rec: CoefficientProfile::new(grid, d)?,
        mu_rec: CoefficientProfile::new(grid, mu)?,
        calib,
        trusted,
    })
}

/// All three steps: ratio, `F`, backward march.
pub fn invert(
    h1: &InternalDatum,
    h2: &InternalDatum,
    lambda1: f64,
    lambda2: f64,
    calib: Calibration,
    mode: RatioMode,
) -> Result<OpticalReconstruction> {
    invert_screened(h1, h2, lambda1, lambda2, calib, mode, None)
}

/// As [`invert`], also distrusting every node at or above the deepest one
/// where the recovered `h'` falls below `slope_floor` (see
/// [`ratio_slope_bound_profile`]).
pub fn invert_screened(
    h1: &InternalDatum,
    h2: &InternalDatum,
    lambda1: f64,
    lambda2: f64,
    calib: Calibration,
    mode: RatioMode,
    slope_floor: Option<&[f64]>,
) -> Result<OpticalReconstruction> {
    if h1.k >= h2.k {
        return Err(Error::invalid(format!("need k1 < k2, got {} and {}", h1.k, h2.k)));
    }
    let mut ratio = build_ratio_with(h1, h2, mode)?;
    if let Some(floor) = slope_floor {
        ratio.screen_slope(floor)?;
    }
    let f = reconstruct_f(&ratio, lambda1, lambda2, calib.d_h)?;
    let mut rec = reconstruct_coefficients(&f, h1, lambda1, calib)?;
    for t in rec.trusted.iter_mut().take(ratio.valid_from) {
        *t = false;
    }
    // Re-hold values below the ratio cut.
    let i0 = rec.trusted_from();
    if i0 < rec.trusted.len() {
        let (d0, m0, u0) = (rec.d_rec.values()[i0], rec.mu_rec.values()[i0], rec.u_rec.values()[i0]);
        let grid = *rec.f.grid();
        let hold = |p: &CoefficientProfile, v: f64, zero_at_0: bool| {
            let mut vals = p.values().to_vec();
            for (i, x) in vals.iter_mut().enumerate().take(i0) {
                *x = if zero_at_0 && i == 0 { 0.0 } else { v };
            }
            CoefficientProfile::new(grid, vals)
        };
        rec.d_rec = hold(&rec.d_rec, d0, false)?;
        rec.mu_rec = hold(&rec.mu_rec, m0, false)?;
        rec.u_rec = hold(&rec.u_rec, u0, true)?;
    }
    Ok(rec)
}

/// Weight for the stability norm: `envelope_lo^2` of mode `k1` when the
/// medium is known, else `u_rec^2`.
pub fn reporting_weight(rec: &OpticalReconstruction, medium: Option<&LayeredMedium>, k1: i64) -> Result<Vec<f64>> {
    if let Some(m) = medium {
        let env = compute_envelopes(m, k1)?;
        if let Some(b) = env.bounds {
            return Ok(b.lower.values().iter().map(|v| v * v).collect());
        }
        return Err(Error::KTooSmall { k: k1, kappa_m: env.kappa_m });
    }
    Ok(rec.u_rec.values().iter().map(|v| v * v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedErrors {
    /// `max |w (D - D_rec)|`
    pub d: f64,
    /// `max |w (mu_a - mu_rec)|`
    pub mu: f64,
}

pub fn weighted_errors(rec: &OpticalReconstruction, medium: &LayeredMedium, weight: &[f64]) -> WeightedErrors {
    WeightedErrors {
        d: crate::optical::weighted_max_diff(weight, medium.diffusion.values(), rec.d_rec.values()),
        mu: crate::optical::weighted_max_diff(weight, medium.absorption.values(), rec.mu_rec.values()),
    }
}

/// One left/right pair of a stability estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPair {
    pub lhs: f64,
    /// `|h1 - h1~|_C1 + |h2 - h2~|_C1`
    pub data_norm: f64,
    /// `lhs / data_norm`; `None` for identical data.
    pub ratio: Option<f64>,
}

impl StabilityPair {
    fn new(lhs: f64, data_norm: f64) -> Self {
        Self {
            lhs,
            data_norm,
            ratio: (data_norm > 0.0).then(|| lhs / data_norm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityDiagnostics {
    /// `|F - F~|_C0`
    pub f_diff: StabilityPair,
    /// `|w^{1/2} (u - u~)|_C0`
    pub u_diff: StabilityPair,
    /// `|w (D - D~)|_C0`
    pub d_diff: StabilityPair,
    /// `|w (mu - mu~)|_C0`
    pub mu_diff: StabilityPair,
}

/// Empirical constants of the optical stability estimates for two
/// reconstructions, using the common weight `w` for both.
pub fn stability_diagnostics(
    rec: &OpticalReconstruction,
    rec_tilde: &OpticalReconstruction,
    data: (&InternalDatum, &InternalDatum),
    data_tilde: (&InternalDatum, &InternalDatum),
    weight: &[f64],
) -> Result<StabilityDiagnostics> {
    rec.f.check_same_grid(&rec_tilde.f)?;
    let step = rec.f.grid().h_step();
    let diff = |a: &CoefficientProfile, b: &CoefficientProfile| -> Vec<f64> {
        a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect()
    };
    let data_norm = fd::c1_norm(&diff(&data.0.h, &data_tilde.0.h), step)? + fd::c1_norm(&diff(&data.1.h, &data_tilde.1.h), step)?;
    let sqrt_w: Vec<f64> = weight.iter().map(|w| w.sqrt()).collect();
    let wmax = |w: &[f64], a: &CoefficientProfile, b: &CoefficientProfile| {
        crate::optical::weighted_max_diff(w, a.values(), b.values())
    };
    Ok(StabilityDiagnostics {
        f_diff: StabilityPair::new(fd::max_abs(&diff(&rec.f, &rec_tilde.f)), data_norm),
        u_diff: StabilityPair::new(wmax(&sqrt_w, &rec.u_rec, &rec_tilde.u_rec), data_norm),
        d_diff: StabilityPair::new(wmax(weight, &rec.d_rec, &rec_tilde.d_rec), data_norm),
        mu_diff: StabilityPair::new(wmax(weight, &rec.mu_rec, &rec_tilde.mu_rec), data_norm),
    })
}
