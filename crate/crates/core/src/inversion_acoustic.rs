//! Recovery of modal initial data from boundary traces and the observability
//! inequalities that make it stable.
//!
//! The recovery unknowns are energy-normalized: `f0` is parametrized by its
//! cell gradients scaled by `sqrt(h)` and `f1` by `sqrt(w c^-2) f1`, so that
//! for `lambda = 0` the squared Euclidean norm of the unknowns is the
//! discrete energy `E(0)`. Trace rows are scaled by `sqrt(dt)`.

use serde::Serialize;

use crate::acoustic::{observability_constants, BoundaryTrace, ModalInitialData, ModalPropagator, ObservabilityConstants};
use crate::cgne::{self, CgneOptions, LinearOperator};
use crate::error::{Error, Result};
use crate::fd;
use crate::medium::{CoefficientProfile, LayeredMedium};

/// Matrix-free boundary observation map in energy-normalized variables.
pub struct TraceOperator {
    prop: ModalPropagator,
    sqrt_h: f64,
    sqrt_dt: f64,
    inv_sqrt_mass: Vec<f64>,
}

impl TraceOperator {
    pub fn new(prop: ModalPropagator, h_step: f64) -> Self {
        let inv_sqrt_mass = prop.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
        let sqrt_dt = prop.dt().sqrt();
        Self {
            prop,
            sqrt_h: h_step.sqrt(),
            sqrt_dt,
            inv_sqrt_mass,
        }
    }

    /// Operator matching the time grid of `trace`.
    pub fn for_trace(medium: &LayeredMedium, trace: &BoundaryTrace, lambda: f64, beta: f64) -> Result<Self> {
        if trace.samples_p.len() != trace.samples_pt.len() || trace.samples_p.len() < 2 {
            return Err(Error::structural("trace sample sequences must have equal length >= 2"));
        }
        let n_steps = trace.samples_p.len() - 1;
        if (n_steps as f64 * trace.dt - trace.t_final).abs() > 1e-9 * trace.t_final.max(1.0) {
            return Err(Error::structural(format!(
                "trace has {} samples at dt = {} but T = {}",
                n_steps + 1,
                trace.dt,
                trace.t_final
            )));
        }
        let prop = ModalPropagator::new(medium, lambda, beta, trace.dt, n_steps)?;
        Ok(Self::new(prop, medium.grid().h_step()))
    }

    pub fn propagator(&self) -> &ModalPropagator {
        &self.prop
    }

    fn n_free(&self) -> usize {
        self.prop.n_free()
    }

    /// Initial data on the free nodes from normalized unknowns.
    pub fn to_initial_data(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_free();
        let mut f0 = Vec::with_capacity(n);
        let mut acc = 0.0;
        for g in &z[..n] {
            acc += self.sqrt_h * g;
            f0.push(acc);
        }
        let f1 = z[n..].iter().zip(&self.inv_sqrt_mass).map(|(v, s)| v * s).collect();
        (f0, f1)
    }

    /// Normalized unknowns from initial data on the free nodes.
    pub fn from_initial_data(&self, f0: &[f64], f1: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * f0.len());
        let mut left = 0.0;
        for v in f0 {
            z.push((v - left) / self.sqrt_h);
            left = *v;
        }
        z.extend(f1.iter().zip(&self.inv_sqrt_mass).map(|(v, s)| v / s));
        z
    }

    /// Weighted data vector `sqrt(dt) (p_H, pt_H)`.
    pub fn data(&self, trace: &BoundaryTrace) -> Vec<f64> {
        trace
            .samples_p
            .iter()
            .chain(&trace.samples_pt)
            .map(|v| v * self.sqrt_dt)
            .collect()
    }
}

impl LinearOperator for TraceOperator {
    fn n_rows(&self) -> usize {
        2 * (self.prop.n_steps() + 1)
    }

    fn n_cols(&self) -> usize {
        2 * self.n_free()
    }

    fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (f0, f1) = self.to_initial_data(z);
        let (yp, ypt) = self.prop.forward(&f0, &f1)?;
        Ok(yp.iter().chain(&ypt).map(|v| v * self.sqrt_dt).collect())
    }

    fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        let m = self.prop.n_steps() + 1;
        let yp: Vec<f64> = y[..m].iter().map(|v| v * self.sqrt_dt).collect();
        let ypt: Vec<f64> = y[m..].iter().map(|v| v * self.sqrt_dt).collect();
        let (a0, a1) = self.prop.adjoint(&yp, &ypt);
        let n = self.n_free();
        let mut z = vec![0.0; 2 * n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            acc += a0[i];
            z[i] = self.sqrt_h * acc;
        }
        for i in 0..n {
            z[n + i] = a1[i] * self.inv_sqrt_mass[i];
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryResult {
    pub k: i64,
    #[serde(skip)]
    pub f0_rec: CoefficientProfile,
    #[serde(skip)]
    pub f1_rec: CoefficientProfile,
    /// Relative data misfit of the re-simulated trace (weighted `L^2(0,T)`).
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `T <= 2 theta H`: observability is not guaranteed.
    pub below_observability_time: bool,
}

/// Least-squares recovery of `(f0, f1)` of mode `trace.k` by CGNE.
pub fn recover_modal_initial_data(
    medium: &LayeredMedium,
    trace: &BoundaryTrace,
    beta: f64,
    options: &CgneOptions,
) -> Result<RecoveryResult> {
    recover_modal_initial_data_lambda(medium, trace, medium.wavenumber(trace.k), beta, options)
}

pub fn recover_modal_initial_data_lambda(
    medium: &LayeredMedium,
    trace: &BoundaryTrace,
    lambda: f64,
    beta: f64,
    options: &CgneOptions,
) -> Result<RecoveryResult> {
    let op = TraceOperator::for_trace(medium, trace, lambda, beta)?;
    let constants = observability_constants(medium, beta)?;
    let b = op.data(trace);
    let out = cgne::solve(&op, &b, options)?;
    let misfit = {
        let fit = op.apply(&out.x)?;
        let num: f64 = fit.iter().zip(&b).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = b.iter().map(|v| v * v).sum();
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            0.0
        }
    };
    let (f0, f1) = op.to_initial_data(&out.x);
    let grid = *medium.grid();
    let full = |v: Vec<f64>| {
        let mut values = Vec::with_capacity(v.len() + 1);
        values.push(0.0);
        values.extend(v);
        CoefficientProfile::new(grid, values)
    };
    Ok(RecoveryResult {
        k: trace.k,
        f0_rec: full(f0)?,
        f1_rec: full(f1)?,
        residual_norm: misfit,
        iterations: out.iterations,
        converged: out.converged,
        below_observability_time: trace.t_final <= constants.t_min,
    })
}

/// Relative `L^2` error `|a - b| / |b|` by trapezoid quadrature.
pub fn relative_l2_error(recovered: &CoefficientProfile, exact: &CoefficientProfile) -> f64 {
    let h = exact.grid().h_step();
    let diff: Vec<f64> = recovered.values().iter().zip(exact.values()).map(|(a, b)| a - b).collect();
    let den = fd::trapezoid_sq(exact.values(), h);
    let num = fd::trapezoid_sq(&diff, h);
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservabilityCertificate {
    pub k: i64,
    /// `lambda_k^2 int |f0|^2`
    pub lhs_f0: f64,
    /// `int c^-2 |f1|^2 + |f0'|^2`
    pub lhs_grad: f64,
    /// `int_0^T |p_t(H,t)|^2 dt`
    pub velocity_trace: f64,
    /// `int_0^T |p(H,t)|^2 dt`
    pub pressure_trace: f64,
    /// `(C_M / (T - 2 theta H) + beta) velocity_trace + lambda_k^2 pressure_trace`
    pub rhs: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub margin: f64,
    pub constants: ObservabilityConstants,
}

impl ObservabilityCertificate {
    /// `margin >= -rel_tol * rhs`.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.margin >= -rel_tol * self.rhs
    }
}

fn gradient_energy(medium: &LayeredMedium, init: &ModalInitialData) -> Result<f64> {
    let h = medium.grid().h_step();
    let f0 = init.f0.values();
    let s = medium.inv_speed_sq();
    let w = fd::trapezoid_weights(f0.len(), h);
    let mut e = 0.0;
    for i in 0..f0.len() {
        e += w[i] * s.values()[i] * init.f1.values()[i].powi(2);
        if i > 0 {
            e += (f0[i] - f0[i - 1]).powi(2) / h;
        }
    }
    Ok(e)
}

/// Evaluate both inequalities of the modal observability estimate.
pub fn certify_observability(
    medium: &LayeredMedium,
    init: &ModalInitialData,
    trace: &BoundaryTrace,
    beta: f64,
) -> Result<ObservabilityCertificate> {
    certify_observability_lambda(medium, init, trace, medium.wavenumber(init.k), beta)
}

pub fn certify_observability_lambda(
    medium: &LayeredMedium,
    init: &ModalInitialData,
    trace: &BoundaryTrace,
    lambda: f64,
    beta: f64,
) -> Result<ObservabilityCertificate> {
    init.f0.check_same_grid(&medium.diffusion)?;
    if init.k != trace.k {
        return Err(Error::structural(format!("initial data for mode {} but trace of mode {}", init.k, trace.k)));
    }
    let constants = observability_constants(medium, beta)?;
    let t = trace.t_final;
    if t <= constants.t_min {
        return Err(Error::ObservabilityTime { t, t_min: constants.t_min });
    }
    let h = medium.grid().h_step();
    let lhs_f0 = lambda * lambda * fd::trapezoid_sq(init.f0.values(), h);
    let lhs_grad = gradient_energy(medium, init)?;
    let velocity_trace = trace.pt_sq_integral();
    let pressure_trace = trace.p_sq_integral();
    let rhs = constants.velocity_factor(t) * velocity_trace + lambda * lambda * pressure_trace;
    Ok(ObservabilityCertificate {
        k: init.k,
        lhs_f0,
        lhs_grad,
        velocity_trace,
        pressure_trace,
        rhs,
        t,
        margin: rhs - lhs_f0.max(lhs_grad),
        constants,
    })
}

/// Certificate for initial data with finitely many Fourier modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteFourierCertificate {
    pub modes: Vec<ObservabilityCertificate>,
    /// `int |grad f0|^2 = sum_k int |f0k'|^2 + lambda_k^2 |f0k|^2`
    pub lhs_grad_f0: f64,
    /// `int c^-2 |f1|^2 = sum_k int c^-2 |f1k|^2`
    pub lhs_f1: f64,
    /// `(C_M/(T - 2 theta H) + beta) int |p_t|^2 + int |p_x|^2` on the boundary,
    /// with `|p_x|^2` summed as `lambda_k^2 |p_k|^2`.
    pub rhs: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub margin: f64,
}

impl FiniteFourierCertificate {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.margin >= -rel_tol * self.rhs
    }
}

pub fn certify_finite_fourier(
    medium: &LayeredMedium,
    inits: &[ModalInitialData],
    traces: &[BoundaryTrace],
    beta: f64,
) -> Result<FiniteFourierCertificate> {
    if inits.len() != traces.len() || inits.is_empty() {
        return Err(Error::structural("need one trace per mode and at least one mode"));
    }
    let t = traces[0].t_final;
    if traces.iter().any(|tr| (tr.t_final - t).abs() > 1e-12 * t) {
        return Err(Error::structural("all modes must share the observation time T"));
    }
    let h = medium.grid().h_step();
    let s = medium.inv_speed_sq();
    let w = fd::trapezoid_weights(medium.grid().n_points(), h);
    let mut modes = Vec::with_capacity(inits.len());
    let (mut lhs_grad_f0, mut lhs_f1, mut rhs) = (0.0, 0.0, 0.0);
    for (init, trace) in inits.iter().zip(traces) {
        let cert = certify_observability(medium, init, trace, beta)?;
        let f1_sq: f64 = (0..w.len()).map(|i| w[i] * s.values()[i] * init.f1.values()[i].powi(2)).sum();
        lhs_f1 += f1_sq;
        lhs_grad_f0 += cert.lhs_grad - f1_sq + cert.lhs_f0;
        rhs += cert.rhs;
        modes.push(cert);
    }
    Ok(FiniteFourierCertificate {
        modes,
        lhs_grad_f0,
        lhs_f1,
        rhs,
        t,
        margin: rhs - lhs_grad_f0.max(lhs_f1),
    })
}

/// `int_0^T |p(., t)|^2_{H^{1/2}}` of a finite-Fourier trace, computed
/// spectrally as `sum_k (1 + lambda_k^2)^{1/2} int_0^T |p_k(H,t)|^2 dt`.
pub fn h_half_trace_norm_sq(traces: &[BoundaryTrace], width_l: f64) -> f64 {
    traces
        .iter()
        .map(|t| {
            let lam = crate::medium::wavenumber(t.k, width_l);
            (1.0 + lam * lam).sqrt() * t.p_sq_integral()
        })
        .sum()
}

/// Which inequality of the one-side estimate to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderVariant {
    /// Bound on `int |grad f0|^2`; tail `M^2 / lambda^2`.
    Gradient,
    /// Bound on `int c^-2 |f1|^2`; tail `theta^2 M^2 / lambda^2`.
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderBound {
    /// `(C_M/(T - 2 theta H) + beta) int |p_t|^2`
    pub velocity_term: f64,
    /// `int_0^T |p|^2_{H^{1/2}} dt`
    pub trace_term: f64,
    pub m_tilde: f64,
    /// `M^2` or `theta^2 M^2`
    pub tail: f64,
    /// Minimizing cutoff over `lambda_N = 2 pi N / L`, `N >= 1`.
    pub n_star: usize,
    /// `velocity_term + lambda_N trace_term + tail / lambda_{N+1}^2` at `n_star`.
    pub discrete_min: f64,
    pub lambda_star: f64,
    /// `velocity_term + 3 2^{-2/3} trace_term^{2/3} tail^{1/3}`
    pub continuous_min: f64,
    /// `velocity_term + 2 M^{2/3} (theta^{2/3}) trace_term^{2/3}`
    pub stated_bound: f64,
    /// Zero trace term with a positive tail: the minimizer escapes to infinity.
    pub degenerate: bool,
}

/// Minimize `v + lambda b + tail / lambda^2` over `lambda > 0` and over the
/// discrete cutoffs `lambda_N`, `N = 1..=n_max`.
pub fn holder_minimize(v: f64, b: f64, m_tilde: f64, tail_scale: f64, width_l: f64, n_max: usize) -> HolderBound {
    let tail = tail_scale * m_tilde * m_tilde;
    let lam = |n: usize| crate::medium::wavenumber(n as i64, width_l);
    let (mut n_star, mut discrete_min) = (1, f64::INFINITY);
    for n in 1..=n_max.max(1) {
        let val = v + lam(n) * b + tail / lam(n + 1).powi(2);
        if val < discrete_min {
            discrete_min = val;
            n_star = n;
        }
    }
    let degenerate = b == 0.0 && tail > 0.0;
    let (lambda_star, continuous_min) = if tail == 0.0 {
        (0.0, v)
    } else if b == 0.0 {
        (f64::INFINITY, v)
    } else {
        let ls = (2.0 * tail / b).cbrt();
        (ls, v + 3.0 * 2f64.powf(-2.0 / 3.0) * b.powf(2.0 / 3.0) * tail.cbrt())
    };
    let stated_bound = v + 2.0 * tail.cbrt() * b.powf(2.0 / 3.0);
    HolderBound {
        velocity_term: v,
        trace_term: b,
        m_tilde,
        tail,
        n_star,
        discrete_min,
        lambda_star,
        continuous_min,
        stated_bound,
        degenerate,
    }
}

/// One-side Holder bound from simulated finite-Fourier traces.
pub fn holder_one_side_bound(
    medium: &LayeredMedium,
    traces: &[BoundaryTrace],
    beta: f64,
    m_tilde: f64,
    variant: HolderVariant,
    n_max: usize,
) -> Result<HolderBound> {
    if !(m_tilde >= 0.0) {
        return Err(Error::invalid("a-priori bound M must be >= 0"));
    }
    if traces.is_empty() {
        return Err(Error::structural("no traces"));
    }
    let constants = observability_constants(medium, beta)?;
    let t = traces[0].t_final;
    if t <= constants.t_min {
        return Err(Error::ObservabilityTime { t, t_min: constants.t_min });
    }
    let v = constants.velocity_factor(t) * traces.iter().map(|tr| tr.pt_sq_integral()).sum::<f64>();
    let b = h_half_trace_norm_sq(traces, medium.width_l);
    let tail_scale = match variant {
        HolderVariant::Gradient => 1.0,
        HolderVariant::Velocity => constants.theta * constants.theta,
    };
    Ok(holder_minimize(v, b, m_tilde, tail_scale, medium.width_l, n_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::{simulate_modal_wave_lambda, WaveConfig};
    use crate::medium::{AdmissibleBounds, Grid1D};
    use std::f64::consts::PI;

    fn medium(n: usize) -> LayeredMedium {
        LayeredMedium::homogeneous(n, 1.0, 1.0, 1.0, 1.0, 1.0, AdmissibleBounds::new(0.5, 0.5, 10.0, 0.1).unwrap()).unwrap()
    }

    fn eigen(g: Grid1D, k: i64) -> ModalInitialData {
        ModalInitialData::new(
            k,
            CoefficientProfile::from_fn(g, |y| (0.5 * PI * y).sin()).unwrap(),
            CoefficientProfile::zeros(g),
        )
        .unwrap()
    }

    #[test]
    fn normalization_round_trip() {
        let m = medium(21);
        let tr = simulate_modal_wave_lambda(&m, &eigen(*m.grid(), 0), 0.0, &WaveConfig::new(1.0, 0.5)).unwrap().trace;
        let op = TraceOperator::for_trace(&m, &tr, 0.0, 1.0).unwrap();
        let f0: Vec<f64> = (1..21).map(|i| (i as f64).sin()).collect();
        let f1: Vec<f64> = (1..21).map(|i| (i as f64).cos()).collect();
        let z = op.from_initial_data(&f0, &f1);
        let (a, b) = op.to_initial_data(&z);
        for (x, y) in a.iter().zip(&f0).chain(b.iter().zip(&f1)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_trace_recovers_zero() {
        let m = medium(41);
        let zero = ModalInitialData::zero(0, *m.grid());
        let tr = simulate_modal_wave_lambda(&m, &zero, 0.0, &WaveConfig::new(1.0, 4.0)).unwrap().trace;
        let r = recover_modal_initial_data_lambda(&m, &tr, 0.0, 1.0, &CgneOptions::default()).unwrap();
        assert_eq!(r.f0_rec.max_abs(), 0.0);
        assert_eq!(r.f1_rec.max_abs(), 0.0);
        assert_eq!(r.residual_norm, 0.0);
    }

    #[test]
    fn recovery_is_linear_and_accurate() {
        let m = medium(129);
        let init = eigen(*m.grid(), 0);
        let tr = simulate_modal_wave_lambda(&m, &init, 0.0, &WaveConfig::new(1.0, 4.0)).unwrap().trace;
        let opts = CgneOptions::default();
        let r1 = recover_modal_initial_data_lambda(&m, &tr, 0.0, 1.0, &opts).unwrap();
        assert!(r1.converged);
        assert!(!r1.below_observability_time);
        assert!(relative_l2_error(&r1.f0_rec, &init.f0) < 1e-4, "{}", relative_l2_error(&r1.f0_rec, &init.f0));
        let r2 = recover_modal_initial_data_lambda(&m, &tr.scaled(2.0), 0.0, 1.0, &opts).unwrap();
        let doubled = r1.f0_rec.map(|v| 2.0 * v).unwrap();
        assert!(relative_l2_error(&r2.f0_rec, &doubled) < 1e-6);
    }

    #[test]
    fn certificate_zero_data_and_blow_up() {
        let m = medium(41);
        let zero = ModalInitialData::zero(1, *m.grid());
        let tr = simulate_modal_wave_lambda(&m, &zero, 2.0 * PI, &WaveConfig::new(0.5, 2.5)).unwrap().trace;
        let c = certify_observability(&m, &zero, &tr, 0.5).unwrap();
        assert_eq!((c.lhs_f0, c.lhs_grad, c.rhs, c.margin), (0.0, 0.0, 0.0, 0.0));
        let short = simulate_modal_wave_lambda(&m, &zero, 2.0 * PI, &WaveConfig::new(0.5, 1.5)).unwrap().trace;
        assert!(matches!(certify_observability(&m, &zero, &short, 0.5), Err(Error::ObservabilityTime { .. })));
    }

    #[test]
    fn single_mode_finite_fourier_has_same_rhs() {
        let m = medium(81);
        let init = eigen(*m.grid(), 1);
        let tr = simulate_modal_wave_lambda(&m, &init, 2.0 * PI, &WaveConfig::new(0.5, 2.5)).unwrap().trace;
        let single = certify_observability(&m, &init, &tr, 0.5).unwrap();
        let agg = certify_finite_fourier(&m, &[init], &[tr], 0.5).unwrap();
        assert_eq!(agg.rhs, single.rhs);
        assert!((agg.lhs_grad_f0 - single.lhs_grad - single.lhs_f0).abs() < 1e-12);
    }

    #[test]
    fn scalar_minimization() {
        let b = holder_minimize(0.0, 1.0, 1.0, 1.0, 1.0, 10);
        assert!((b.lambda_star - 2f64.cbrt()).abs() < 1e-12);
        assert!((b.continuous_min - (2f64.cbrt() + 2f64.powf(-2.0 / 3.0))).abs() < 1e-12);
        assert!((b.continuous_min - 1.8899).abs() < 1e-4);
        assert!(b.continuous_min < b.stated_bound);
        let none = holder_minimize(3.0, 2.0, 0.0, 1.0, 1.0, 10);
        assert_eq!(none.continuous_min, 3.0);
        let degen = holder_minimize(3.0, 0.0, 1.0, 1.0, 1.0, 10);
        assert!(degen.degenerate);
        assert_eq!(degen.n_star, 10);
    }
}
