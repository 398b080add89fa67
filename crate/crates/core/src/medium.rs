//! Layered media: uniform depth grids, coefficient profiles and the
//! admissible set of optical coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;

/// Uniform grid on `[0, H]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_points: usize,
    h_step: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, y_max: f64) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::invalid(format!("grid needs n_points >= 3, got {n_points}")));
        }
        if !(y_max.is_finite() && y_max > 0.0) {
            return Err(Error::invalid(format!("grid length H must be positive, got {y_max}")));
        }
        Ok(Self {
            n_points,
            h_step: y_max / (n_points - 1) as f64,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn h_step(&self) -> f64 {
        self.h_step
    }

    pub fn y_max(&self) -> f64 {
        self.h_step * (self.n_points - 1) as f64
    }

    pub fn y(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.y_max()
        } else {
            i as f64 * self.h_step
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.y(i))
    }

    /// Same node count and spacing up to rounding.
    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.n_points == other.n_points
            && (self.h_step - other.h_step).abs() <= 1e-12 * self.h_step.max(other.h_step)
    }
}

/// Nodal samples of a function of depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientProfile {
    grid: Grid1D,
    values: Vec<f64>,
}

impl CoefficientProfile {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::structural(format!(
                "profile has {} values for a grid of {} nodes",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("profile value at node {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn constant(grid: Grid1D, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_points()])
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points()],
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        fd::max_abs(&self.values)
    }

    /// Index and value of the minimum.
    pub fn argmin(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Self::new(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::structural(format!(
                "grid mismatch: {} nodes (h={}) vs {} nodes (h={})",
                self.grid.n_points(),
                self.grid.h_step(),
                other.grid.n_points(),
                other.grid.h_step()
            )))
        }
    }

    /// Nodal derivative of order 0..=3.
    pub fn derivative(&self, order: usize) -> Result<Self> {
        Self::new(self.grid, fd::derivative(&self.values, self.grid.h_step(), order)?)
    }

    pub fn integral(&self) -> f64 {
        fd::trapezoid(&self.values, self.grid.h_step())
    }

    /// Discrete `C^k` norm with the sum convention: `sum_j max |f^(j)|`.
    pub fn ck_norm(&self, k: usize) -> Result<f64> {
        (0..=k).map(|j| Ok(fd::max_abs(&fd::derivative(&self.values, self.grid.h_step(), j)?))).sum()
    }

    /// Linear interpolation at an arbitrary depth (clamped to `[0, H]`).
    pub fn interpolate(&self, y: f64) -> f64 {
        let n = self.values.len();
        let s = (y / self.grid.h_step()).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Linear resampling onto another grid covering the same depth.
    pub fn resample(&self, grid: Grid1D) -> Result<Self> {
        if (grid.y_max() - self.grid.y_max()).abs() > 1e-12 * self.grid.y_max() {
            return Err(Error::structural("resampling grid spans a different depth"));
        }
        Self::new(grid, grid.nodes().map(|y| self.interpolate(y)).collect())
    }
}

/// Constants defining the admissible set of optical coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleBounds {
    /// Lower bound for `D`.
    pub d0: f64,
    /// Lower bound for `mu_a`.
    pub mu0: f64,
    /// Cap on the `C^3` norms of `D` and `mu_a`.
    #[serde(rename = "M")]
    pub m_cap: f64,
    /// Lower bound for `c^-2`.
    pub c_m: f64,
}

impl AdmissibleBounds {
    pub fn new(d0: f64, mu0: f64, m_cap: f64, c_m: f64) -> Result<Self> {
        let b = Self { d0, mu0, m_cap, c_m };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d0 > 0.0
            && self.mu0 > 0.0
            && self.c_m > 0.0
            && self.d0 < self.m_cap
            && self.mu0 < self.m_cap
            && self.m_cap.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "bounds need 0 < d0 < M, 0 < mu0 < M, c_m > 0; got {self:?}"
            )))
        }
    }
}

/// Depth-dependent optical and acoustic coefficients on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredMedium {
    pub diffusion: CoefficientProfile,
    pub absorption: CoefficientProfile,
    pub speed: CoefficientProfile,
    pub width_l: f64,
    pub bounds: AdmissibleBounds,
}

impl LayeredMedium {
    /// Checks the structural invariants only; use [`check_admissibility`]
    /// for membership in the admissible set.
    pub fn new(
        diffusion: CoefficientProfile,
        absorption: CoefficientProfile,
        speed: CoefficientProfile,
        width_l: f64,
        bounds: AdmissibleBounds,
    ) -> Result<Self> {
        diffusion.check_same_grid(&absorption)?;
        diffusion.check_same_grid(&speed)?;
        bounds.validate()?;
        if !(width_l.is_finite() && width_l > 0.0) {
            return Err(Error::invalid(format!("width L must be positive, got {width_l}")));
        }
        if let Some(i) = diffusion.values().iter().position(|&d| d <= 0.0) {
            return Err(Error::invalid(format!("diffusion must be positive (node {i})")));
        }
        if let Some(i) = speed.values().iter().position(|&c| c <= 0.0) {
            return Err(Error::invalid(format!("speed must be positive (node {i})")));
        }
        Ok(Self {
            diffusion,
            absorption,
            speed,
            width_l,
            bounds,
        })
    }

    /// Constant coefficients on `[0, H]`.
    pub fn homogeneous(
        n_points: usize,
        depth: f64,
        width_l: f64,
        d: f64,
        mu_a: f64,
        c: f64,
        bounds: AdmissibleBounds,
    ) -> Result<Self> {
        let grid = Grid1D::new(n_points, depth)?;
        Self::new(
            CoefficientProfile::constant(grid, d)?,
            CoefficientProfile::constant(grid, mu_a)?,
            CoefficientProfile::constant(grid, c)?,
            width_l,
            bounds,
        )
    }

    pub fn grid(&self) -> &Grid1D {
        self.diffusion.grid()
    }

    pub fn depth(&self) -> f64 {
        self.grid().y_max()
    }

    /// `c^-2` at every node.
    pub fn inv_speed_sq(&self) -> CoefficientProfile {
        self.speed
            .map(|c| 1.0 / (c * c))
            .expect("speed profile is finite and positive")
    }

    /// Same coefficients resampled onto a grid with `n_points` nodes.
    pub fn resampled(&self, n_points: usize) -> Result<Self> {
        let grid = Grid1D::new(n_points, self.depth())?;
        Self::new(
            self.diffusion.resample(grid)?,
            self.absorption.resample(grid)?,
            self.speed.resample(grid)?,
            self.width_l,
            self.bounds,
        )
    }

    pub fn wavenumber(&self, k: i64) -> f64 {
        wavenumber(k, self.width_l)
    }
}

/// `lambda_k = 2 pi k / L`.
pub fn wavenumber(k: i64, width_l: f64) -> f64 {
    2.0 * std::f64::consts::PI * k as f64 / width_l
}

/// Margin of one admissibility constraint (positive means satisfied).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintMargin {
    pub name: &'static str,
    pub margin: f64,
    /// Depth of the worst node, when the constraint is pointwise.
    pub location: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub pass: bool,
    pub constraints: Vec<ConstraintMargin>,
}

impl AdmissibilityReport {
    pub fn constraint(&self, name: &str) -> Option<&ConstraintMargin> {
        self.constraints.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintMargin> {
        self.constraints.iter().filter(|c| c.margin < 0.0)
    }
}

fn lower_bound_margin(name: &'static str, profile: &CoefficientProfile, bound: f64) -> ConstraintMargin {
    let (i, v) = profile.argmin();
    ConstraintMargin {
        name,
        margin: v - bound,
        location: Some(profile.grid().y(i)),
    }
}

/// Membership test for the admissible set, with per-constraint margins.
///
/// `C^3` norms are estimated with second-order finite differences (sum of the
/// max-norms of derivatives 0..=3); grids need at least six nodes.
pub fn check_admissibility(medium: &LayeredMedium) -> Result<AdmissibilityReport> {
    medium.diffusion.check_same_grid(&medium.absorption)?;
    medium.diffusion.check_same_grid(&medium.speed)?;
    let b = &medium.bounds;
    let d_c3 = medium.diffusion.ck_norm(3)?;
    let mu_c3 = medium.absorption.ck_norm(3)?;
    let constraints = vec![
        lower_bound_margin("D_lower", &medium.diffusion, b.d0),
        lower_bound_margin("mu_a_lower", &medium.absorption, b.mu0),
        ConstraintMargin {
            name: "D_c3",
            margin: b.m_cap - d_c3,
            location: None,
        },
        ConstraintMargin {
            name: "mu_a_c3",
            margin: b.m_cap - mu_c3,
            location: None,
        },
        lower_bound_margin("c_inv_sq_lower", &medium.inv_speed_sq(), b.c_m),
    ];
    let pass = constraints.iter().all(|c| c.margin >= 0.0);
    Ok(AdmissibilityReport { pass, constraints })
}
