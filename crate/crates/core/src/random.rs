//! Seeded random media and initial data for property tests and sweeps.
//!
//! Profiles are a mean value plus three cosine terms. The perturbation is
//! halved until the medium lands in the admissible set.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::ModalInitialData;
use crate::error::{Error, Result};
use crate::medium::{check_admissibility, AdmissibleBounds, CoefficientProfile, Grid1D, LayeredMedium};

const N_TERMS: usize = 3;
const MAX_SHRINK: usize = 40;

/// Ranges for [`random_medium`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMediumSpec {
    pub n_points: usize,
    pub depth: f64,
    pub width_l: f64,
    pub bounds: AdmissibleBounds,
    /// Range of the mean diffusion.
    pub d_mean: (f64, f64),
    /// Range of the mean absorption.
    pub mu_mean: (f64, f64),
    /// Relative amplitude of the cosine perturbation before shrinking.
    pub relative_amplitude: f64,
    /// Speed range; `None` keeps `c = 1`.
    pub speed: Option<(f64, f64)>,
}

impl Default for RandomMediumSpec {
    fn default() -> Self {
        Self {
            n_points: 401,
            depth: 1.0,
            width_l: 1.0,
            bounds: AdmissibleBounds {
                d0: 0.2,
                mu0: 0.2,
                m_cap: 20.0,
                c_m: 0.2,
            },
            d_mean: (0.5, 2.0),
            mu_mean: (0.5, 3.0),
            relative_amplitude: 0.3,
            speed: None,
        }
    }
}

fn cosine_series(rng: &mut impl Rng, depth: f64) -> Vec<(f64, f64, f64)> {
    (1..=N_TERMS)
        .map(|j| {
            let a = rng.random_range(-1.0..1.0) / j as f64;
            let phase = rng.random_range(0.0..2.0 * PI);
            (a, j as f64 * PI / depth, phase)
        })
        .collect()
}

fn eval_series(terms: &[(f64, f64, f64)], y: f64) -> f64 {
    terms.iter().map(|(a, w, p)| a * (w * y + p).cos()).sum()
}

/// Smooth random profile `mean (1 + amplitude s(y))` with `|s| <= 1`.
pub fn random_smooth_profile(rng: &mut impl Rng, grid: Grid1D, mean: f64, amplitude: f64) -> Result<CoefficientProfile> {
    let terms = cosine_series(rng, grid.y_max());
    let norm: f64 = terms.iter().map(|t| t.0.abs()).sum::<f64>().max(1e-12);
    CoefficientProfile::from_fn(grid, |y| mean * (1.0 + amplitude * eval_series(&terms, y) / norm))
}

/// Random speed profile with values inside `[lo, hi]`.
pub fn random_speed(rng: &mut impl Rng, grid: Grid1D, lo: f64, hi: f64) -> Result<CoefficientProfile> {
    if !(0.0 < lo && lo <= hi) {
        return Err(Error::invalid(format!("bad speed range [{lo}, {hi}]")));
    }
    let mid = 0.5 * (lo + hi);
    let spread = rng.random_range(0.0..1.0) * 0.5 * (hi - lo) / mid;
    let p = random_smooth_profile(rng, grid, mid, spread)?;
    p.map(|c| c.clamp(lo, hi))
}

/// Draw an admissible medium.
pub fn random_medium(rng: &mut impl Rng, spec: &RandomMediumSpec) -> Result<LayeredMedium> {
    let grid = Grid1D::new(spec.n_points, spec.depth)?;
    let d_mean = rng.random_range(spec.d_mean.0..=spec.d_mean.1);
    let mu_mean = rng.random_range(spec.mu_mean.0..=spec.mu_mean.1);
    let d_terms = cosine_series(rng, spec.depth);
    let mu_terms = cosine_series(rng, spec.depth);
    let speed = match spec.speed {
        Some((lo, hi)) => random_speed(rng, grid, lo, hi)?,
        None => CoefficientProfile::constant(grid, 1.0)?,
    };
    let d_norm: f64 = d_terms.iter().map(|t| t.0.abs()).sum::<f64>().max(1e-12);
    let mu_norm: f64 = mu_terms.iter().map(|t| t.0.abs()).sum::<f64>().max(1e-12);
    let mut amp = spec.relative_amplitude;
    for _ in 0..MAX_SHRINK {
        let d = CoefficientProfile::from_fn(grid, |y| d_mean * (1.0 + amp * eval_series(&d_terms, y) / d_norm))?;
        let mu = CoefficientProfile::from_fn(grid, |y| mu_mean * (1.0 + amp * eval_series(&mu_terms, y) / mu_norm))?;
        if d.min() > 0.0 {
            let medium = LayeredMedium::new(d, mu, speed.clone(), spec.width_l, spec.bounds)?;
            if check_admissibility(&medium)?.pass {
                return Ok(medium);
            }
        }
        amp *= 0.5;
    }
    Err(Error::invalid(format!(
        "mean values D = {d_mean}, mu_a = {mu_mean} are not admissible for {:?}",
        spec.bounds
    )))
}

/// Smooth random modal initial data vanishing at `y = 0`.
///
/// `f0 = (y / H) g(y)` with a smooth random `g`; `f0'(H)` is not forced to
/// vanish. `f1` has the same form and is zero unless `with_velocity`.
pub fn random_initial_data(rng: &mut impl Rng, grid: Grid1D, k: i64, with_velocity: bool) -> Result<ModalInitialData> {
    let h = grid.y_max();
    let g0 = rng.random_range(0.5..1.5);
    let g = cosine_series(rng, h);
    let f0 = CoefficientProfile::from_fn(grid, |y| y / h * (g0 + 0.5 * eval_series(&g, y)))?;
    let f1 = if with_velocity {
        let v = cosine_series(rng, h);
        CoefficientProfile::from_fn(grid, |y| y / h * eval_series(&v, y))?
    } else {
        CoefficientProfile::zeros(grid)
    };
    ModalInitialData::new(k, f0, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn media_are_admissible_and_reproducible() {
        let spec = RandomMediumSpec {
            speed: Some((0.5, 2.0)),
            n_points: 101,
            ..Default::default()
        };
        for seed in 0..20 {
            let a = random_medium(&mut ChaCha8Rng::seed_from_u64(seed), &spec).unwrap();
            let b = random_medium(&mut ChaCha8Rng::seed_from_u64(seed), &spec).unwrap();
            assert_eq!(a, b);
            assert!(check_admissibility(&a).unwrap().pass);
            assert!(a.speed.min() >= 0.5 && a.speed.max() <= 2.0);
        }
    }

    #[test]
    fn initial_data_vanishes_at_bottom() {
        let g = Grid1D::new(51, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_initial_data(&mut rng, g, 2, true).unwrap();
        assert_eq!(d.f0.first(), 0.0);
        assert!(d.f1.max_abs() > 0.0);
    }
}
