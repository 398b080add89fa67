//! Per-mode damped wave equation
//!
//! ```text
//! c^-2 p_tt = p_yy - lambda_k^2 p,   p(0, t) = 0,   p_y(H, t) + beta p_t(H, t) = 0,
//! ```
//!
//! integrated with explicit leapfrog. The Robin condition at `y = H` is
//! eliminated through a centered ghost node, which makes the boundary row
//! implicit in the single unknown `p_N^{n+1}` only.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd;
use crate::medium::{CoefficientProfile, LayeredMedium};

/// CFL safety factor used when the time step is chosen automatically.
pub const DEFAULT_CFL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalInitialData {
    pub k: i64,
    pub f0: CoefficientProfile,
    pub f1: CoefficientProfile,
}

impl ModalInitialData {
    pub fn new(k: i64, f0: CoefficientProfile, f1: CoefficientProfile) -> Result<Self> {
        f0.check_same_grid(&f1)?;
        let scale = f0.max_abs().max(1.0);
        if f0.first().abs() > 1e-12 * scale {
            return Err(Error::invalid(format!(
                "initial pressure must vanish at y = 0, got {}",
                f0.first()
            )));
        }
        Ok(Self { k, f0, f1 })
    }

    pub fn zero(k: i64, grid: crate::medium::Grid1D) -> Self {
        Self {
            k,
            f0: CoefficientProfile::zeros(grid),
            f1: CoefficientProfile::zeros(grid),
        }
    }
}

/// Pressure and its time derivative at `y = H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryTrace {
    pub k: i64,
    pub dt: f64,
    pub samples_p: Vec<f64>,
    pub samples_pt: Vec<f64>,
    pub t_final: f64,
}

impl BoundaryTrace {
    pub fn n_steps(&self) -> usize {
        self.samples_p.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples_p.len()).map(|n| n as f64 * self.dt).collect()
    }

    /// `int_0^T |p(H,t)|^2 dt` by the trapezoid rule.
    pub fn p_sq_integral(&self) -> f64 {
        fd::trapezoid_sq(&self.samples_p, self.dt)
    }

    /// `int_0^T |p_t(H,t)|^2 dt` by the trapezoid rule.
    pub fn pt_sq_integral(&self) -> f64 {
        fd::trapezoid_sq(&self.samples_pt, self.dt)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples_p: self.samples_p.iter().map(|v| v * factor).collect(),
            samples_pt: self.samples_pt.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        if self.samples_p.len() != other.samples_p.len() || self.dt != other.dt {
            return Err(Error::structural("traces on different time grids"));
        }
        Ok(Self {
            samples_p: self.samples_p.iter().zip(&other.samples_p).map(|(a, b)| a - b).collect(),
            samples_pt: self.samples_pt.iter().zip(&other.samples_pt).map(|(a, b)| a - b).collect(),
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// `2 beta int_0^t |p_t(H,s)|^2 ds`, trapezoid in time. With `E` as
    /// defined (no factor 1/2) the boundary flux is `2 p_t p_y = -2 beta p_t^2`.
    pub boundary_dissipation: Vec<f64>,
}

impl EnergyLedger {
    /// `max_n |E(t_n) - E(0)| / E(0)`.
    pub fn max_relative_drift(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
    }

    /// `max_n |E(0) - E(t_n) - dissipation(t_n)| / E(0)`.
    pub fn max_identity_defect(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy
            .iter()
            .zip(&self.boundary_dissipation)
            .map(|(e, d)| (e0 - e - d).abs() / e0)
            .fold(0.0, f64::max)
    }
}

/// Time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveConfig {
    pub beta: f64,
    pub t_final: f64,
    /// `None` selects `CFL * stability limit`, adjusted so the steps divide `T`.
    pub dt: Option<f64>,
    pub cfl: f64,
}

impl WaveConfig {
    pub fn new(beta: f64, t_final: f64) -> Self {
        Self {
            beta,
            t_final,
            dt: None,
            cfl: DEFAULT_CFL,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }
}

/// Largest stable leapfrog step: `h / (max c sqrt(1 + lambda^2 h^2 / 4))`.
pub fn stability_limit(medium: &LayeredMedium, lambda: f64) -> f64 {
    let h = medium.grid().h_step();
    h / (medium.speed.max() * (1.0 + 0.25 * lambda * lambda * h * h).sqrt())
}

/// The discrete modal wave propagator: mass, stiffness and damping on the
/// free nodes `1..=N` (node 0 carries the Dirichlet condition).
///
/// The scheme is `M (p^{n+1} - 2p^n + p^{n-1}) / dt^2 + A p^n + B (p^{n+1} - p^{n-1}) / (2 dt) = 0`
/// with `M = diag(w c^-2)`, `A = K + lambda^2 diag(w)`, `B = beta e_N e_N^T`,
/// `w` the trapezoid weights and `K` the linear-element stiffness matrix.
#[derive(Debug, Clone)]
pub struct ModalPropagator {
    mass: Vec<f64>,
    weights: Vec<f64>,
    a_diag: Vec<f64>,
    a_off: f64,
    beta: f64,
    lambda: f64,
    dt: f64,
    n_steps: usize,
    h: f64,
}

impl ModalPropagator {
    pub fn new(medium: &LayeredMedium, lambda: f64, beta: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("damping beta must be >= 0, got {beta}")));
        }
        if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 {
            return Err(Error::invalid("need dt > 0 and at least one time step"));
        }
        let limit = stability_limit(medium, lambda);
        if dt > limit {
            return Err(Error::Cfl { dt, required: limit });
        }
        let grid = medium.grid();
        let n = grid.n_points();
        let h = grid.h_step();
        let w_full = fd::trapezoid_weights(n, h);
        let c_inv2 = medium.inv_speed_sq();
        let weights: Vec<f64> = w_full[1..].to_vec();
        let mass: Vec<f64> = (1..n).map(|i| w_full[i] * c_inv2.values()[i]).collect();
        let lam2 = lambda * lambda;
        let a_diag: Vec<f64> = (1..n)
            .map(|i| {
                let k = if i + 1 == n { 1.0 / h } else { 2.0 / h };
                k + lam2 * w_full[i]
            })
            .collect();
        Ok(Self {
            mass,
            weights,
            a_diag,
            a_off: -1.0 / h,
            beta,
            lambda,
            dt,
            n_steps,
            h,
        })
    }

    /// Build with the time step from `config`, checking the CFL limit.
    pub fn from_config(medium: &LayeredMedium, lambda: f64, config: &WaveConfig) -> Result<Self> {
        if !(config.t_final > 0.0) {
            return Err(Error::invalid("final time must be positive"));
        }
        let limit = stability_limit(medium, lambda);
        let (dt, n_steps) = match config.dt {
            Some(dt) => {
                if dt > limit {
                    return Err(Error::Cfl { dt, required: limit });
                }
                (dt, (config.t_final / dt + 1e-9).floor() as usize)
            }
            None => {
                let n_steps = (config.t_final / (config.cfl * limit)).ceil() as usize;
                (config.t_final / n_steps as f64, n_steps)
            }
        };
        Self::new(medium, lambda, config.beta, dt, n_steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Lumped mass `w_i c_i^-2` on the free nodes.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Number of free nodes.
    pub fn n_free(&self) -> usize {
        self.mass.len()
    }

    fn apply_a(&self, p: &[f64], out: &mut [f64]) {
        let n = p.len();
        for i in 0..n {
            let mut s = self.a_diag[i] * p[i];
            if i > 0 {
                s += self.a_off * p[i - 1];
            }
            if i + 1 < n {
                s += self.a_off * p[i + 1];
            }
            out[i] = s;
        }
    }

    fn damping(&self, i: usize) -> f64 {
        if i + 1 == self.mass.len() {
            self.beta
        } else {
            0.0
        }
    }

    /// `p^1` from the Taylor start consistent with the centered scheme.
    fn first_step(&self, f0: &[f64], f1: &[f64], scratch: &mut [f64]) -> Vec<f64> {
        self.apply_a(f0, scratch);
        let dt = self.dt;
        (0..f0.len())
            .map(|i| {
                let force = scratch[i] + self.damping(i) * f1[i];
                f0[i] + dt * f1[i] - 0.5 * dt * dt * force / self.mass[i]
            })
            .collect()
    }

    /// `p^{n+1}` from `p^n`, `p^{n-1}`.
    fn step(&self, cur: &[f64], prev: &[f64], next: &mut [f64], scratch: &mut [f64]) {
        self.apply_a(cur, scratch);
        let dt2 = self.dt * self.dt;
        let half = 0.5 * self.dt;
        let n = cur.len();
        for i in 0..n {
            let m = self.mass[i];
            next[i] = (2.0 * m * cur[i] - dt2 * scratch[i] - m * prev[i]) / m;
        }
        let i = n - 1;
        let m = self.mass[i];
        let b = self.beta * half;
        next[i] = (2.0 * m * cur[i] - dt2 * scratch[i] - (m - b) * prev[i]) / (m + b);
    }

    /// Discrete energy: trapezoid quadrature of `c^-2 p_t^2` and
    /// `lambda^2 p^2` plus the cell-wise `sum (p_{i+1} - p_i)^2 / h`.
    pub fn energy(&self, p: &[f64], pt: &[f64]) -> f64 {
        let mut e = 0.0;
        let mut left = 0.0;
        for i in 0..p.len() {
            e += self.mass[i] * pt[i] * pt[i];
            e += self.lambda * self.lambda * self.weights[i] * p[i] * p[i];
            let d = p[i] - left;
            e += d * d / self.h;
            left = p[i];
        }
        e
    }

    /// Run the scheme, calling `observe(n, p^{n-1}, p^n, p^{n+1})` for every
    /// `n = 0..=n_steps` (with `p^{-1} = p^1 - 2 dt f1`).
    fn run(&self, f0: &[f64], f1: &[f64], mut observe: impl FnMut(usize, &[f64], &[f64], &[f64]) -> Result<()>) -> Result<()> {
        let n = self.n_free();
        let mut scratch = vec![0.0; n];
        let mut cur = f0.to_vec();
        let mut next = self.first_step(f0, f1, &mut scratch);
        let mut prev: Vec<f64> = next.iter().zip(f1).map(|(p1, v)| p1 - 2.0 * self.dt * v).collect();
        for step in 0..=self.n_steps {
            if step > 0 {
                std::mem::swap(&mut prev, &mut cur);
                std::mem::swap(&mut cur, &mut next);
                self.step(&cur, &prev, &mut next, &mut scratch);
                if !next[n - 1].is_finite() || (step % 64 == 0 && next.iter().any(|v| !v.is_finite())) {
                    return Err(Error::NonFinite { step: step + 1 });
                }
            }
            observe(step, &prev, &cur, &next)?;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: self.n_steps });
        }
        Ok(())
    }

    /// Calls `observe(n, p^n)` on the free nodes for `n = 0..=n_steps`.
    pub fn for_each_state(&self, f0: &[f64], f1: &[f64], mut observe: impl FnMut(usize, &[f64])) -> Result<()> {
        self.run(f0, f1, |n, _, cur, _| {
            observe(n, cur);
            Ok(())
        })
    }

    /// Boundary samples `(p_N^n, (p_N^{n+1} - p_N^{n-1}) / 2dt)`, `n = 0..=n_steps`,
    /// for initial data on the free nodes.
    pub fn forward(&self, f0: &[f64], f1: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let last = self.n_free() - 1;
        let mut yp = Vec::with_capacity(self.n_steps + 1);
        let mut ypt = Vec::with_capacity(self.n_steps + 1);
        let inv2dt = 0.5 / self.dt;
        self.run(f0, f1, |n, prev, cur, next| {
            yp.push(cur[last]);
            ypt.push(if n == 0 { f1[last] } else { (next[last] - prev[last]) * inv2dt });
            Ok(())
        })?;
        Ok((yp, ypt))
    }

    /// Exact transpose of [`forward`](Self::forward).
    pub fn adjoint(&self, yp: &[f64], ypt: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nt = self.n_steps;
        assert_eq!(yp.len(), nt + 1);
        assert_eq!(ypt.len(), nt + 1);
        let n = self.n_free();
        let last = n - 1;
        let inv2dt = 0.5 / self.dt;
        let dt2 = self.dt * self.dt;
        let half = 0.5 * self.dt;

        // Output sensitivity of p^m at the boundary node (m = 0..=nt+1).
        let seed = |m: usize| -> f64 {
            let mut s = 0.0;
            if m <= nt {
                s += yp[m];
            }
            if m >= 2 && m - 1 <= nt {
                s += ypt[m - 1] * inv2dt;
            }
            if m < nt {
                s -= ypt[m + 1] * inv2dt;
            }
            s
        };

        let mut f0_bar = vec![0.0; n];
        let mut f1_bar = vec![0.0; n];
        f1_bar[last] += ypt[0];

        let mut upper = vec![0.0; n];
        let mut mid = vec![0.0; n];
        let mut low = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        upper[last] = seed(nt + 1);
        mid[last] = seed(nt);
        if nt >= 1 {
            low[last] = seed(nt - 1);
        }
        // Reverse p^{n+1} = D1^{-1}[(2M - dt^2 A) p^n - D2 p^{n-1}] for n = nt..1.
        for step in (1..=nt).rev() {
            for i in 0..n {
                let b = self.damping(i) * half;
                r[i] = upper[i] / (self.mass[i] + b);
            }
            self.apply_a(&r, &mut scratch);
            for i in 0..n {
                let b = self.damping(i) * half;
                mid[i] += 2.0 * self.mass[i] * r[i] - dt2 * scratch[i];
                low[i] -= (self.mass[i] - b) * r[i];
            }
            std::mem::swap(&mut upper, &mut mid);
            std::mem::swap(&mut mid, &mut low);
            low.iter_mut().for_each(|v| *v = 0.0);
            if step >= 2 {
                low[last] = seed(step - 2);
            }
        }
        // Now `upper` holds the adjoint of p^1 and `mid` that of p^0.
        // p^1 = f0 + dt f1 - dt^2/2 M^{-1} (A f0 + B f1)
        let s = &upper;
        for i in 0..n {
            r[i] = s[i] / self.mass[i];
        }
        self.apply_a(&r, &mut scratch);
        for i in 0..n {
            f0_bar[i] += s[i] - 0.5 * dt2 * scratch[i] + mid[i];
            f1_bar[i] += self.dt * s[i] - 0.5 * dt2 * self.damping(i) * r[i];
        }
        (f0_bar, f1_bar)
    }
}

/// Trace, energy history and damping of one modal simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveRun {
    pub trace: BoundaryTrace,
    pub energy: EnergyLedger,
    pub beta: f64,
}

fn free_nodes(profile: &CoefficientProfile) -> &[f64] {
    &profile.values()[1..]
}

/// Simulate mode `init.k` of the damped wave equation up to `config.t_final`.
pub fn simulate_modal_wave(medium: &LayeredMedium, init: &ModalInitialData, config: &WaveConfig) -> Result<WaveRun> {
    simulate_modal_wave_lambda(medium, init, medium.wavenumber(init.k), config)
}

/// As [`simulate_modal_wave`] with the wavenumber given directly.
pub fn simulate_modal_wave_lambda(
    medium: &LayeredMedium,
    init: &ModalInitialData,
    lambda: f64,
    config: &WaveConfig,
) -> Result<WaveRun> {
    init.f0.check_same_grid(&medium.diffusion)?;
    let prop = ModalPropagator::from_config(medium, lambda, config)?;
    let f0 = free_nodes(&init.f0);
    let f1 = free_nodes(&init.f1);
    let last = prop.n_free() - 1;
    let dt = prop.dt();
    let nt = prop.n_steps();
    let mut samples_p = Vec::with_capacity(nt + 1);
    let mut samples_pt = Vec::with_capacity(nt + 1);
    let mut energy = Vec::with_capacity(nt + 1);
    let mut dissipation = Vec::with_capacity(nt + 1);
    let mut pt = vec![0.0; prop.n_free()];
    let inv2dt = 0.5 / dt;
    prop.run(f0, f1, |n, prev, cur, next| {
        if n == 0 {
            pt.copy_from_slice(f1);
        } else {
            for i in 0..pt.len() {
                pt[i] = (next[i] - prev[i]) * inv2dt;
            }
        }
        samples_p.push(cur[last]);
        samples_pt.push(pt[last]);
        energy.push(prop.energy(cur, &pt));
        let d = match n {
            0 => 0.0,
            _ => {
                let a = samples_pt[n - 1];
                let b = samples_pt[n];
                dissipation[n - 1] + dt * config.beta * (a * a + b * b)
            }
        };
        dissipation.push(d);
        Ok(())
    })?;
    Ok(WaveRun {
        trace: BoundaryTrace {
            k: init.k,
            dt,
            samples_p,
            samples_pt,
            t_final: nt as f64 * dt,
        },
        energy: EnergyLedger {
            times: (0..=nt).map(|n| n as f64 * dt).collect(),
            energy,
            boundary_dissipation: dissipation,
        },
        beta: config.beta,
    })
}

/// `E = int c^-2 |p_t|^2 + |p_y|^2 + lambda^2 |p|^2 dy` for a full nodal state.
pub fn compute_energy(medium: &LayeredMedium, p: &[f64], pt: &[f64], lambda: f64) -> Result<f64> {
    let n = medium.grid().n_points();
    if p.len() != n || pt.len() != n {
        return Err(Error::structural("state arrays do not match the medium grid"));
    }
    let h = medium.grid().h_step();
    let w = fd::trapezoid_weights(n, h);
    let c_inv2 = medium.inv_speed_sq();
    let mut e = 0.0;
    for i in 0..n {
        e += w[i] * (c_inv2.values()[i] * pt[i] * pt[i] + lambda * lambda * p[i] * p[i]);
        if i > 0 {
            let d = p[i] - p[i - 1];
            e += d * d / h;
        }
    }
    Ok(e)
}

/// Initial energy `E_k(0)` of modal initial data.
pub fn initial_energy(medium: &LayeredMedium, init: &ModalInitialData, lambda: f64) -> Result<f64> {
    compute_energy(medium, init.f0.values(), init.f1.values(), lambda)
}

/// Constants of the continuity and observability estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservabilityConstants {
    /// `sqrt(max c^-2)`.
    pub theta: f64,
    /// `H exp(int c^2 |(c^-2)'|) (c^-2(H) + beta^2)`.
    pub c_big_m: f64,
    pub c_m1: f64,
    pub c_m2: f64,
    pub c_m3: f64,
    /// `2 theta H`.
    pub t_min: f64,
    /// `int_0^H c^2 |(c^-2)'| dy`.
    pub exponent: f64,
    /// `|c^-2|_inf + |(c^-2)'|_inf`.
    pub w1inf_norm: f64,
    pub beta: f64,
    pub depth: f64,
}

impl ObservabilityConstants {
    /// `C_M / (T - 2 theta H) + beta`; infinite for `T <= 2 theta H`.
    pub fn velocity_factor(&self, t: f64) -> f64 {
        if t <= self.t_min {
            f64::INFINITY
        } else {
            self.c_big_m / (t - self.t_min) + self.beta
        }
    }
}

/// Evaluate the constants with trapezoid quadrature on the medium grid.
/// The lower bound of `c^-2` entering `C_m^1` is its grid minimum.
pub fn observability_constants(medium: &LayeredMedium, beta: f64) -> Result<ObservabilityConstants> {
    if medium.speed.min() <= 0.0 {
        return Err(Error::invalid("speed profile must be positive"));
    }
    let h_depth = medium.depth();
    let s = medium.inv_speed_sq();
    let ds = s.derivative(1)?;
    let integrand: Vec<f64> = s
        .values()
        .iter()
        .zip(ds.values())
        .map(|(si, dsi)| dsi.abs() / si)
        .collect();
    let exponent = fd::trapezoid(&integrand, medium.grid().h_step());
    let s_h = s.last();
    let s_max = s.max();
    let c_min = s.min();
    let w1inf_norm = s.max_abs() + ds.max_abs();
    let denom = 1.0 + h_depth * s_h;
    let theta = s_max.sqrt();
    Ok(ObservabilityConstants {
        theta,
        c_big_m: h_depth * exponent.exp() * (s_h + beta * beta),
        c_m1: (1.0 + (1.0 + h_depth / c_min) * w1inf_norm) / denom,
        c_m2: h_depth / denom,
        c_m3: (1.0 + 2.0 * h_depth * theta) / denom,
        t_min: 2.0 * theta * h_depth,
        exponent,
        w1inf_norm,
        beta,
        depth: h_depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityCheck {
    /// `beta^2 int_0^T |p_t(H,t)|^2 dt`
    pub lhs: f64,
    /// `((C_m^1 + C_m^2 lambda_k) T + C_m^3) E_k(0)`
    pub rhs: f64,
    pub margin: f64,
    pub initial_energy: f64,
}

/// Compare the boundary velocity output against the continuity bound.
/// With `beta = 0` the left side vanishes and the bound says nothing.
pub fn verify_continuity_bound(
    medium: &LayeredMedium,
    trace: &BoundaryTrace,
    init: &ModalInitialData,
    constants: &ObservabilityConstants,
    lambda: f64,
) -> Result<ContinuityCheck> {
    let e0 = initial_energy(medium, init, lambda)?;
    let beta = constants.beta;
    let lhs = beta * beta * trace.pt_sq_integral();
    let rhs = ((constants.c_m1 + constants.c_m2 * lambda) * trace.t_final + constants.c_m3) * e0;
    Ok(ContinuityCheck {
        lhs,
        rhs,
        margin: rhs - lhs,
        initial_energy: e0,
    })
}
