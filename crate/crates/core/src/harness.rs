//! End-to-end experiments: optical forward, acoustic forward, noisy traces,
//! acoustic inversion, optical inversion, weighted errors.
//!
//! Sweep points `(epsilon, seed)` run on a rayon pool capped by the
//! `PATL_THREADS` environment variable; all files are written after the
//! reduction, in a fixed order, so repeated runs give identical bytes.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{observability_constants, simulate_modal_wave, BoundaryTrace, ModalInitialData, ObservabilityConstants, WaveConfig};
use crate::cgne::CgneOptions;
use crate::error::{Error, Result};
use crate::fd;
use crate::inversion_acoustic::recover_modal_initial_data;
use crate::inversion_optical::{self, Calibration, RatioMode};
use crate::io::{self, AnalyticProfile, MediumSpec, ProfileSpec, Table};
use crate::medium::{check_admissibility, AdmissibleBounds, CoefficientProfile, LayeredMedium};
use crate::smoothing;
use crate::optical::{compute_envelopes, make_internal_data, solve_modal_bvp, InternalDatum};

/// Medium given by file path or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MediumSource {
    Path(PathBuf),
    Inline(MediumSpec),
}

impl MediumSource {
    pub fn load(&self, base: Option<&Path>) -> Result<MediumSpec> {
        match self {
            MediumSource::Inline(spec) => Ok(spec.clone()),
            MediumSource::Path(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                MediumSpec::load(&path)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgneSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub eps: f64,
}

impl Default for CgneSettings {
    fn default() -> Self {
        let d = CgneOptions::default();
        Self {
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            eps: d.damping,
        }
    }
}

impl From<CgneSettings> for CgneOptions {
    fn from(s: CgneSettings) -> Self {
        CgneOptions {
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
            damping: s.eps,
        }
    }
}

fn default_t_factor() -> f64 {
    4.0
}

fn default_threshold() -> f64 {
    1e-4
}

fn default_h3_factor() -> Option<f64> {
    Some(2.0)
}

/// JSON-shaped experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub medium: MediumSource,
    pub k1: i64,
    pub k2: i64,
    pub beta: f64,
    /// Observation time; `None` means `t_factor * theta * H`.
    #[serde(rename = "T", default)]
    pub t_final: Option<f64>,
    #[serde(default = "default_t_factor")]
    pub t_factor: f64,
    /// Trace noise levels (RMS of the added Gaussian noise).
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Grid override for the medium file.
    #[serde(default)]
    pub n_points: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub cgne: CgneSettings,
    /// Initial velocity used for both modes (zero if absent).
    #[serde(default)]
    pub f1: Option<ProfileSpec>,
    /// Weight threshold of the depth-resolution curve.
    #[serde(default = "default_threshold")]
    pub depth_threshold: f64,
    /// A priori bound on the recovered data: third-derivative L2 norm at most factor times that of the clean data.
    /// `null` leaves the CGNE output unprojected.
    #[serde(default = "default_h3_factor")]
    pub h3_bound_factor: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 >= self.k2 {
            return Err(Error::invalid(format!("need k1 < k2, got {} and {}", self.k1, self.k2)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta must be >= 0"));
        }
        if self.noise_levels.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::invalid("noise levels must be nonnegative"));
        }
        if self.noise_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("noise levels must be strictly ascending"));
        }
        if !self.noise_levels.is_empty() && self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is needed"));
        }
        if self.h3_bound_factor.is_some_and(|f| !(f >= 1.0)) {
            return Err(Error::invalid("h3_bound_factor must be >= 1"));
        }
        if !(self.depth_threshold > 0.0) {
            return Err(Error::invalid("depth threshold must be positive"));
        }
        Ok(())
    }
}

/// Recovered ratios are screened against this fraction of the class lower
/// bound on `h'`; the bound itself is within a few percent of the true slope
/// near `y = H`.
pub const SLOPE_FLOOR_FRACTION: f64 = 0.5;

/// Everything that does not depend on the noise realization.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub medium: LayeredMedium,
    pub constants: ObservabilityConstants,
    pub t_final: f64,
    pub data: (InternalDatum, InternalDatum),
    pub clean_traces: (BoundaryTrace, BoundaryTrace),
    /// `envelope_lo^2` of mode `k1`.
    pub weight: Vec<f64>,
    pub calib: Calibration,
    /// H^3 ball radii of the two recovered data, if projecting.
    pub h3_bounds: Option<[f64; 2]>,
    /// Pointwise lower bound on the slope of `h2 / h1` over the admissible class.
    pub slope_floor: Vec<f64>,
}

pub fn prepare(config: &ExperimentConfig, base: Option<&Path>) -> Result<PreparedExperiment> {
    config.validate()?;
    let spec = config.medium.load(base)?;
    let medium = match config.n_points {
        Some(n) => spec.build_with_points(n)?,
        None => spec.build()?,
    };
    prepare_with_medium(config, medium)
}

pub fn prepare_with_medium(config: &ExperimentConfig, medium: LayeredMedium) -> Result<PreparedExperiment> {
    config.validate()?;
    let report = check_admissibility(&medium)?;
    if !report.pass {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        return Err(Error::invalid(format!("medium is not admissible: {}", names.join(", "))));
    }
    let constants = observability_constants(&medium, config.beta)?;
    let t_final = config.t_final.unwrap_or(config.t_factor * constants.t_min / 2.0);
    if t_final <= constants.t_min {
        return Err(Error::ObservabilityTime { t: t_final, t_min: constants.t_min });
    }
    let (h1, h2) = make_internal_data(&medium, config.k1, config.k2).map_err(|e| e.in_stage("optical_forward"))?;
    let grid = *medium.grid();
    let f1 = match &config.f1 {
        Some(p) => p.evaluate(grid)?,
        None => CoefficientProfile::zeros(grid),
    };
    let wave = WaveConfig {
        dt: config.dt,
        ..WaveConfig::new(config.beta, t_final)
    };
    let mut traces = Vec::with_capacity(2);
    for d in [&h1, &h2] {
        let init = ModalInitialData::new(d.k, d.h.clone(), f1.clone())?;
        let run = simulate_modal_wave(&medium, &init, &wave).map_err(|e| e.in_stage("acoustic_forward"))?;
        traces.push(run.trace);
    }
    let t2 = traces.pop().expect("two traces");
    let t1 = traces.pop().expect("two traces");
    let env = compute_envelopes(&medium, config.k1)?;
    let weight = match env.bounds {
        Some(b) => b.lower.values().iter().map(|v| v * v).collect(),
        None => return Err(Error::KTooSmall { k: config.k1, kappa_m: env.kappa_m }),
    };
    let step = medium.grid().h_step();
    let h3_bounds = config.h3_bound_factor.map(|f| {
        [
            f * smoothing::third_derivative_norm(h1.h.values(), step),
            f * smoothing::third_derivative_norm(h2.h.values(), step),
        ]
    });
    let slope_floor = inversion_optical::ratio_slope_bound_profile(&medium, config.k1, config.k2)?
        .into_iter()
        .map(|b| SLOPE_FLOOR_FRACTION * b)
        .collect();
    Ok(PreparedExperiment {
        config: config.clone(),
        h3_bounds,
        slope_floor,
        calib: Calibration::from_medium(&medium),
        medium,
        constants,
        t_final: t1.t_final,
        data: (h1, h2),
        clean_traces: (t1, t2),
        weight,
    })
}

/// Zero-mean Gaussian noise of RMS `eps` on both channels.
pub fn add_noise(trace: &BoundaryTrace, eps: f64, rng: &mut ChaCha8Rng) -> BoundaryTrace {
    let sp = eps;
    let spt = eps;
    let mut noisy = trace.clone();
    for v in noisy.samples_p.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sp * z;
    }
    for v in noisy.samples_pt.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += spt * z;
    }
    noisy
}

/// Random stream for one `(seed, noise level, mode)` triple.
pub fn noise_rng(seed: u64, level_index: usize, mode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level_index as u64) << 8) | mode as u64);
    rng
}

/// `int_0^T (C_M/(T - 2 theta H) + beta) |dp_t|^2 + lambda^2 |dp|^2 dt` of one mode.
pub fn boundary_misfit(constants: &ObservabilityConstants, lambda: f64, a: &BoundaryTrace, b: &BoundaryTrace) -> Result<f64> {
    let d = a.minus(b)?;
    Ok(constants.velocity_factor(a.t_final) * d.pt_sq_integral() + lambda * lambda * d.p_sq_integral())
}

/// Result of one `(epsilon, seed)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub seed: u64,
    /// Sum over both modes of the trace misfit integrals.
    pub boundary_misfit: f64,
    /// `boundary_misfit^{1/4}`
    pub rhs_bound: f64,
    pub weighted_err_mu: f64,
    pub weighted_err_d: f64,
    /// `|h_j - h_j,rec|_C1`, j = 1, 2.
    pub h_c1_misfit: [f64; 2],
    pub cgne_iterations: [usize; 2],
    pub cgne_residual: [f64; 2],
    /// Shallowest untrusted `y` of the optical reconstruction (0 when only `y = 0`).
    pub truncation_y: f64,
}

pub fn run_point(prep: &PreparedExperiment, level_index: usize, epsilon: f64, seed: u64) -> Result<SweepRecord> {
    let medium = &prep.medium;
    let cfg = &prep.config;
    let opts: CgneOptions = cfg.cgne.into();
    let step = medium.grid().h_step();
    let mut recovered = Vec::with_capacity(2);
    let mut misfit = 0.0;
    let mut iterations = [0; 2];
    let mut residual = [0.0; 2];
    let mut h_c1 = [0.0; 2];
    for (j, (datum, clean)) in [(&prep.data.0, &prep.clean_traces.0), (&prep.data.1, &prep.clean_traces.1)].into_iter().enumerate() {
        let noisy = if epsilon > 0.0 {
            add_noise(clean, epsilon, &mut noise_rng(seed, level_index, j))
        } else {
            clean.clone()
        };
        misfit += boundary_misfit(&prep.constants, medium.wavenumber(datum.k), &noisy, clean)?;
        let rec = recover_modal_initial_data(medium, &noisy, cfg.beta, &opts).map_err(|e| e.in_stage("acoustic_inversion"))?;
        iterations[j] = rec.iterations;
        residual[j] = rec.residual_norm;
        let f0 = match prep.h3_bounds {
            Some(b) => {
                let p = smoothing::project_h3_ball(rec.f0_rec.values(), step, b[j]).map_err(|e| e.in_stage("acoustic_inversion"))?;
                CoefficientProfile::new(*medium.grid(), p.values)?
            }
            None => rec.f0_rec,
        };
        let diff: Vec<f64> = f0.values().iter().zip(datum.h.values()).map(|(a, b)| a - b).collect();
        h_c1[j] = fd::c1_norm(&diff, step)?;
        recovered.push(InternalDatum::from_samples(datum.k, f0)?);
    }
    let lam1 = medium.wavenumber(cfg.k1);
    let lam2 = medium.wavenumber(cfg.k2);
    let rec = inversion_optical::invert_screened(
        &recovered[0],
        &recovered[1],
        lam1,
        lam2,
        prep.calib,
        RatioMode::Suffix,
        Some(&prep.slope_floor),
    )
        .map_err(|e| e.in_stage("optical_inversion"))?;
    let errs = inversion_optical::weighted_errors(&rec, medium, &prep.weight);
    Ok(SweepRecord {
        epsilon,
        seed,
        boundary_misfit: misfit,
        rhs_bound: misfit.powf(0.25),
        weighted_err_mu: errs.mu,
        weighted_err_d: errs.d,
        h_c1_misfit: h_c1,
        cgne_iterations: iterations,
        cgne_residual: residual,
        truncation_y: rec.truncation_depth().unwrap_or(0.0),
    })
}

/// Least-squares slope of `log y` against `log x` (positive entries only).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Per-level aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub epsilon: f64,
    pub mean_err_mu: f64,
    pub mean_err_d: f64,
    pub max_err_mu: f64,
    pub max_err_d: f64,
    pub mean_rhs_bound: f64,
}

/// Empirical check of the global estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderCheck {
    /// `max err / epsilon^{1/2}` at the smallest positive level.
    pub c_emp_eps: f64,
    /// `max err / misfit^{1/4}` at the smallest positive level.
    pub c_emp_misfit: f64,
    /// Points with `err > c_emp_eps epsilon^{1/2}`.
    pub violations_eps: usize,
    /// Points with `err > c_emp_misfit misfit^{1/4}`.
    pub violations_misfit: usize,
    pub slope_mu: Option<f64>,
    pub slope_d: Option<f64>,
}

fn holder_check(records: &[SweepRecord]) -> Option<HolderCheck> {
    let positive: Vec<&SweepRecord> = records.iter().filter(|r| r.epsilon > 0.0).collect();
    let eps0 = positive.iter().map(|r| r.epsilon).fold(f64::INFINITY, f64::min);
    if !eps0.is_finite() {
        return None;
    }
    let err = |r: &SweepRecord| r.weighted_err_mu.max(r.weighted_err_d);
    let base: Vec<&&SweepRecord> = positive.iter().filter(|r| r.epsilon == eps0).collect();
    let c_eps = base.iter().map(|r| err(r) / r.epsilon.sqrt()).fold(0.0, f64::max);
    let c_mis = base.iter().map(|r| err(r) / r.rhs_bound).fold(0.0, f64::max);
    let violations_eps = positive.iter().filter(|r| err(r) > c_eps * r.epsilon.sqrt()).count();
    let violations_misfit = positive.iter().filter(|r| err(r) > c_mis * r.rhs_bound).count();
    let levels = summarize_levels(records);
    let lv: Vec<&LevelSummary> = levels.iter().filter(|l| l.epsilon > 0.0).collect();
    let eps: Vec<f64> = lv.iter().map(|l| l.epsilon).collect();
    Some(HolderCheck {
        c_emp_eps: c_eps,
        c_emp_misfit: c_mis,
        violations_eps,
        violations_misfit,
        slope_mu: loglog_slope(&eps, &lv.iter().map(|l| l.mean_err_mu).collect::<Vec<_>>()),
        slope_d: loglog_slope(&eps, &lv.iter().map(|l| l.mean_err_d).collect::<Vec<_>>()),
    })
}

pub fn summarize_levels(records: &[SweepRecord]) -> Vec<LevelSummary> {
    let mut out: Vec<LevelSummary> = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let eps = records[i].epsilon;
        let group: Vec<&SweepRecord> = records[i..].iter().take_while(|r| r.epsilon == eps).collect();
        let n = group.len() as f64;
        out.push(LevelSummary {
            epsilon: eps,
            mean_err_mu: group.iter().map(|r| r.weighted_err_mu).sum::<f64>() / n,
            mean_err_d: group.iter().map(|r| r.weighted_err_d).sum::<f64>() / n,
            max_err_mu: group.iter().map(|r| r.weighted_err_mu).fold(0.0, f64::max),
            max_err_d: group.iter().map(|r| r.weighted_err_d).fold(0.0, f64::max),
            mean_rhs_bound: group.iter().map(|r| r.rhs_bound).sum::<f64>() / n,
        });
        i += group.len();
    }
    out
}

/// Weight profile and resolvable depth for one illumination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthCurve {
    pub k1: i64,
    pub threshold: f64,
    #[serde(skip)]
    pub y: Vec<f64>,
    #[serde(skip)]
    pub weight: Vec<f64>,
    #[serde(skip)]
    pub resolvable: Vec<bool>,
    /// `H - y*` with `y*` the smallest `y` such that `w >= threshold` on `[y, H]`.
    pub resolvable_depth: f64,
    /// Least-squares slope of `log w` over `[H/2, H]`.
    pub fitted_rate: f64,
    /// `2 sqrt(kappa)` of the lower envelope.
    pub predicted_rate: f64,
    pub relative_rate_error: f64,
    /// Depth `H - y` of the shallowest untrusted node of a clean reconstruction.
    pub untrusted_depth: Option<f64>,
}

pub fn depth_resolution_curve(medium: &LayeredMedium, k1: i64, threshold: f64) -> Result<DepthCurve> {
    let env = compute_envelopes(medium, k1)?;
    let Some(bounds) = env.bounds.as_ref() else {
        return Err(Error::KTooSmall { k: k1, kappa_m: env.kappa_m });
    };
    let grid = *medium.grid();
    let h = grid.y_max();
    let y: Vec<f64> = grid.nodes().collect();
    let weight: Vec<f64> = bounds.lower.values().iter().map(|v| v * v).collect();
    let n = y.len();
    let mut first = n - 1;
    for i in (0..n).rev() {
        if weight[i] >= threshold * (1.0 - 1e-12) {
            first = i;
        } else {
            break;
        }
    }
    let resolvable: Vec<bool> = (0..n).map(|i| i >= first).collect();
    let (xs, ls): (Vec<f64>, Vec<f64>) = (0..n)
        .filter(|&i| y[i] >= 0.5 * h && weight[i] > 0.0)
        .map(|i| (y[i], weight[i].ln()))
        .unzip();
    let fitted_rate = {
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let ml = ls.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxl: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - ml)).sum();
        sxl / sxx
    };
    let predicted_rate = 2.0 * env.kappa_lower().sqrt();
    Ok(DepthCurve {
        k1,
        threshold,
        resolvable_depth: h - y[first],
        y,
        weight,
        resolvable,
        fitted_rate,
        predicted_rate,
        relative_rate_error: (fitted_rate - predicted_rate).abs() / predicted_rate,
        untrusted_depth: None,
    })
}

impl DepthCurve {
    /// Attach the truncation depth of a clean reconstruction from modes `k1 < k2`.
    pub fn with_truncation(mut self, medium: &LayeredMedium, k2: i64) -> Result<Self> {
        let (h1, h2) = make_internal_data(medium, self.k1, k2)?;
        let rec = inversion_optical::invert(
            &h1,
            &h2,
            medium.wavenumber(self.k1),
            medium.wavenumber(k2),
            Calibration::from_medium(medium),
            RatioMode::Suffix,
        )?;
        self.untrusted_depth = rec.truncation_depth().map(|y| medium.depth() - y);
        Ok(self)
    }
}

/// `C~ (|dh|_{H1} |dh|_{H3})^{1/2}`: the Sobolev interpolation bound for `|dh|_{C1}`.
pub fn interpolation_chain(h_misfit_h1: f64, a_priori_h3: f64, constant: f64) -> f64 {
    constant * (h_misfit_h1 * a_priori_h3).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterpolationCheck {
    pub h1_norm: f64,
    pub h3_norm: f64,
    pub c1_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn interpolation_check(a: &CoefficientProfile, b: &CoefficientProfile, constant: f64) -> Result<InterpolationCheck> {
    a.check_same_grid(b)?;
    let step = a.grid().h_step();
    let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let h1_norm = fd::sobolev_norm(&d, step, 1)?;
    let h3_norm = fd::sobolev_norm(&d, step, 3)?;
    let c1_norm = fd::c1_norm(&d, step)?;
    let bound = interpolation_chain(h1_norm, h3_norm, constant);
    Ok(InterpolationCheck {
        h1_norm,
        h3_norm,
        c1_norm,
        bound,
        holds: c1_norm <= bound,
    })
}

/// Safety factor applied to the largest observed ratio when calibrating.
pub const INTERPOLATION_SAFETY: f64 = 2.0;

/// Perturbations of `medium` used to calibrate the interpolation constant.
pub fn perturbation_family(medium: &LayeredMedium) -> Result<Vec<LayeredMedium>> {
    let grid = *medium.grid();
    let h = grid.y_max();
    let mut out = Vec::new();
    for j in 1..=3 {
        for delta in [0.01, 0.05] {
            let w = j as f64 * std::f64::consts::PI / h;
            let bump = CoefficientProfile::from_fn(grid, |y| 1.0 + delta * (w * y).cos())?;
            let d = medium.diffusion.zip_with(&bump, |a, b| a * b)?;
            let bump2 = CoefficientProfile::from_fn(grid, |y| 1.0 + delta * (w * y).sin())?;
            let mu = medium.absorption.zip_with(&bump2, |a, b| a * b)?;
            out.push(LayeredMedium::new(d, mu, medium.speed.clone(), medium.width_l, medium.bounds)?);
        }
    }
    Ok(out)
}

/// `INTERPOLATION_SAFETY * max |dh|_C1 / (|dh|_H1 |dh|_H3)^{1/2}` over the
/// perturbation family of `medium` and both internal data.
pub fn calibrate_interpolation_constant(medium: &LayeredMedium, k1: i64, k2: i64) -> Result<f64> {
    let (a1, a2) = make_internal_data(medium, k1, k2)?;
    let mut worst: f64 = 0.0;
    for m in perturbation_family(medium)? {
        let (b1, b2) = make_internal_data(&m, k1, k2)?;
        for (a, b) in [(&a1, &b1), (&a2, &b2)] {
            let c = interpolation_check(&a.h, &b.h, 1.0)?;
            if c.bound > 0.0 {
                worst = worst.max(c.c1_norm / c.bound);
            }
        }
    }
    Ok(INTERPOLATION_SAFETY * worst)
}

/// The documented reference phantom: `H = 1`, `L = 2 pi` (so `lambda_k = k`),
/// `D = 1 + 0.2 y`, `mu_a = 2 + 0.5 sin(pi y)`, `c = 1 + 0.25 y`.
pub fn reference_medium_spec(n_points: usize) -> MediumSpec {
    MediumSpec {
        width_l: 2.0 * std::f64::consts::PI,
        depth: 1.0,
        n_points,
        diffusion: ProfileSpec::Analytic(AnalyticProfile::Linear { value0: 1.0, slope: 0.2 }),
        mu_a: ProfileSpec::Analytic(AnalyticProfile::Sine {
            mean: 2.0,
            amplitude: 0.5,
            frequency: 0.5,
            phase: 0.0,
        }),
        c: ProfileSpec::Analytic(AnalyticProfile::Linear { value0: 1.0, slope: 0.25 }),
        bounds: AdmissibleBounds {
            d0: 0.5,
            mu0: 0.5,
            m_cap: 40.0,
            c_m: 0.2,
        },
    }
}

/// Reference sweep: `k1 = 1`, `k2 = 2`, `beta = 1`, `T = 4 theta H`.
pub fn reference_config(n_points: usize, noise_levels: Vec<f64>, seeds: Vec<u64>, output_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        medium: MediumSource::Inline(reference_medium_spec(n_points)),
        k1: 1,
        k2: 2,
        beta: 1.0,
        t_final: None,
        t_factor: default_t_factor(),
        noise_levels,
        seeds,
        output_dir,
        n_points: None,
        dt: None,
        cgne: CgneSettings::default(),
        f1: None,
        depth_threshold: default_threshold(),
        h3_bound_factor: default_h3_factor(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub config: ExperimentConfig,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub constants: ObservabilityConstants,
    pub kappa_m_k1: f64,
    pub kappa_big_m_k1: f64,
    /// Records in `(noise level, seed)` order.
    pub records: Vec<SweepRecord>,
    pub levels: Vec<LevelSummary>,
    pub holder: Option<HolderCheck>,
    pub depth_curve: Option<DepthCurve>,
    pub interpolation_constant: Option<f64>,
    /// First stage error; records cover the levels completed before it.
    pub failure: Option<String>,
}

impl StabilityReport {
    /// A report with no data, e.g. for a configuration with no noise levels.
    pub fn empty(config: ExperimentConfig, t_final: f64, constants: ObservabilityConstants) -> Self {
        Self {
            config,
            t_final,
            constants,
            kappa_m_k1: f64::NAN,
            kappa_big_m_k1: f64::NAN,
            records: Vec::new(),
            levels: Vec::new(),
            holder: None,
            depth_curve: None,
            interpolation_constant: None,
            failure: None,
        }
    }
}

/// Thread pool honoring `PATL_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PATL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("PATL_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::invalid("PATL_THREADS must be >= 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))
}

/// Run every `(noise level, seed)` point and assemble the report.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<StabilityReport> {
    run_pipeline_from(config, None)
}

/// As [`run_pipeline`], resolving a relative medium path against `base`.
pub fn run_pipeline_from(config: &ExperimentConfig, base: Option<&Path>) -> Result<StabilityReport> {
    let prep = prepare(config, base)?;
    run_prepared(&prep)
}

pub fn run_prepared(prep: &PreparedExperiment) -> Result<StabilityReport> {
    let cfg = &prep.config;
    let points: Vec<(usize, f64, u64)> = cfg
        .noise_levels
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| cfg.seeds.iter().map(move |&s| (i, e, s)))
        .collect();
    let pool = thread_pool()?;
    let results: Vec<Result<SweepRecord>> =
        pool.install(|| points.par_iter().map(|&(i, e, s)| run_point(prep, i, e, s)).collect());

    let mut records = Vec::with_capacity(results.len());
    let mut failure = None;
    let per_level = cfg.seeds.len().max(1);
    for chunk in results.chunks(per_level) {
        if let Some(err) = chunk.iter().find_map(|r| r.as_ref().err()) {
            failure = Some(err.to_string());
            break;
        }
        records.extend(chunk.iter().map(|r| r.as_ref().expect("checked").clone()));
    }
    let sol = solve_modal_bvp(&prep.medium, cfg.k1)?;
    let depth = depth_resolution_curve(&prep.medium, cfg.k1, cfg.depth_threshold)?.with_truncation(&prep.medium, cfg.k2)?;
    Ok(StabilityReport {
        config: cfg.clone(),
        t_final: prep.t_final,
        constants: prep.constants,
        kappa_m_k1: sol.kappa_m(),
        kappa_big_m_k1: sol.kappa_big_m(),
        levels: summarize_levels(&records),
        holder: holder_check(&records),
        records,
        depth_curve: Some(depth),
        interpolation_constant: Some(calibrate_interpolation_constant(&prep.medium, cfg.k1, cfg.k2)?),
        failure,
    })
}

pub const SWEEP_CSV: &str = "sweep.csv";
pub const DEPTH_CSV: &str = "depth_curve.csv";
pub const SUMMARY_JSON: &str = "summary.json";

fn sweep_table(records: &[SweepRecord]) -> Result<Table> {
    let col = |f: &dyn Fn(&SweepRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    Table::new(
        &[
            "epsilon",
            "seed",
            "boundary_misfit",
            "rhs_bound",
            "weighted_err_mu",
            "weighted_err_D",
            "h1_c1_misfit",
            "h2_c1_misfit",
            "cgne_iter_k1",
            "cgne_iter_k2",
            "cgne_residual_k1",
            "cgne_residual_k2",
            "truncation_y",
        ],
        vec![
            col(&|r| r.epsilon),
            col(&|r| r.seed as f64),
            col(&|r| r.boundary_misfit),
            col(&|r| r.rhs_bound),
            col(&|r| r.weighted_err_mu),
            col(&|r| r.weighted_err_d),
            col(&|r| r.h_c1_misfit[0]),
            col(&|r| r.h_c1_misfit[1]),
            col(&|r| r.cgne_iterations[0] as f64),
            col(&|r| r.cgne_iterations[1] as f64),
            col(&|r| r.cgne_residual[0]),
            col(&|r| r.cgne_residual[1]),
            col(&|r| r.truncation_y),
        ],
    )
}

fn depth_table(curve: &DepthCurve) -> Result<Table> {
    let h = curve.y.last().copied().unwrap_or(0.0);
    Table::new(
        &["depth", "y", "weight", "resolvable"],
        vec![
            curve.y.iter().map(|y| h - y).collect(),
            curve.y.clone(),
            curve.weight.clone(),
            curve.resolvable.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect(),
        ],
    )
}

fn write_dat(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut text = format!("# {header}\n");
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    io::write_string(path, &text)
}

const STABILITY_PLT: &str = "set terminal pngcairo size 800,600
set output 'stability.png'
set logscale xy
set xlabel 'noise level epsilon'
set ylabel 'weighted error'
set key left top
plot 'stability.dat' using 1:2 with linespoints title 'mu_a', \\
     'stability.dat' using 1:3 with linespoints title 'D', \\
     'stability.dat' using 1:4 with lines dashtype 2 title 'misfit^{1/4}'
";

const DEPTH_PLT: &str = "set terminal pngcairo size 800,600
set output 'depth.png'
set logscale y
set xlabel 'depth H - y'
set ylabel 'envelope_lo^2'
plot 'depth.dat' using 1:2 with lines title 'weight'
";

/// Write tables, summary and plot files; returns the written paths.
pub fn emit_outputs(report: &StabilityReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = io::ensure_dir(dir)?;
    let mut manifest = Vec::new();
    if !report.records.is_empty() {
        let p = dir.join(SWEEP_CSV);
        sweep_table(&report.records)?.write_csv(&p)?;
        manifest.push(p);
        let p = dir.join("stability.dat");
        write_dat(
            &p,
            "epsilon mean_err_mu mean_err_D mean_rhs_bound",
            report
                .levels
                .iter()
                .filter(|l| l.epsilon > 0.0)
                .map(|l| vec![l.epsilon, l.mean_err_mu, l.mean_err_d, l.mean_rhs_bound]),
        )?;
        manifest.push(p);
        let p = dir.join("stability.plt");
        io::write_string(&p, STABILITY_PLT)?;
        manifest.push(p);
    }
    if let Some(curve) = &report.depth_curve {
        let p = dir.join(DEPTH_CSV);
        depth_table(curve)?.write_csv(&p)?;
        manifest.push(p);
        let p = dir.join("depth.dat");
        let h = curve.y.last().copied().unwrap_or(0.0);
        write_dat(&p, "depth weight", curve.y.iter().zip(&curve.weight).map(|(y, w)| vec![h - y, *w]))?;
        manifest.push(p);
        let p = dir.join("depth.plt");
        io::write_string(&p, DEPTH_PLT)?;
        manifest.push(p);
    }
    let p = dir.join(SUMMARY_JSON);
    let mut summary = serde_json::to_value(report).map_err(|e| Error::invalid(e.to_string()))?;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("records");
        obj.insert(
            "units".into(),
            serde_json::Value::String(
                "raw discrete values; misfits are trapezoid integrals over (0,T) of squared trace differences in the units of p and p_t"
                    .into(),
            ),
        );
        let files: Vec<String> = manifest
            .iter()
            .chain(std::iter::once(&p))
            .filter_map(|q| q.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect();
        obj.insert("files".into(), serde_json::json!(files));
    }
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    io::write_string(&p, &text)?;
    manifest.push(p);
    if let Some(missing) = manifest.iter().find(|p| !p.exists()) {
        return Err(Error::Io {
            path: missing.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "written file is missing"),
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn constant_medium(n: usize, mu: f64, width_l: f64) -> LayeredMedium {
        LayeredMedium::homogeneous(n, 1.0, width_l, 1.0, mu, 1.0, AdmissibleBounds::new(0.5, 0.5, 1000.0, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = reference_config(65, vec![1e-3, 1e-2], vec![1], PathBuf::from("out"));
        assert!(c.validate().is_ok());
        c.k2 = 1;
        assert!(c.validate().is_err());
        c.k2 = 2;
        c.noise_levels = vec![1e-2, 1e-3];
        assert!(c.validate().is_err());
        c.noise_levels = vec![-1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = reference_config(65, vec![1e-3], vec![1, 2], PathBuf::from("out"));
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let short: ExperimentConfig = serde_json::from_str(
            r#"{"medium": "m.json", "k1": 1, "k2": 3, "beta": 1.0, "noise_levels": [], "seeds": [], "output_dir": "o"}"#,
        )
        .unwrap();
        assert_eq!(short.medium, MediumSource::Path("m.json".into()));
        assert_eq!(short.t_factor, 4.0);
    }

    #[test]
    fn short_observation_time_is_rejected() {
        let mut c = reference_config(65, vec![], vec![], PathBuf::from("out"));
        c.t_final = Some(0.5);
        assert!(matches!(prepare(&c, None), Err(Error::ObservabilityTime { .. })));
    }

    #[test]
    fn misfit_scales_quadratically() {
        let prep = prepare(&reference_config(65, vec![], vec![], PathBuf::from("o")), None).unwrap();
        let clean = &prep.clean_traces.0;
        let lam = prep.medium.wavenumber(1);
        let noisy = add_noise(clean, 1e-3, &mut noise_rng(5, 0, 0));
        let noisy2 = add_noise(clean, 2e-3, &mut noise_rng(5, 0, 0));
        let a = boundary_misfit(&prep.constants, lam, &noisy, clean).unwrap();
        let b = boundary_misfit(&prep.constants, lam, &noisy2, clean).unwrap();
        assert!((b / a - 4.0).abs() < 1e-9);
        assert!(((b.powf(0.25) / a.powf(0.25)) - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn noise_streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: f64 = noise_rng(1, 0, 0).random();
        let b: f64 = noise_rng(1, 0, 1).random();
        let c: f64 = noise_rng(1, 1, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, noise_rng(1, 0, 0).random::<f64>());
    }

    #[test]
    fn depth_curve_limits() {
        let m = constant_medium(401, 3.0, 2.0 * PI);
        let c = depth_resolution_curve(&m, 1, 1.0).unwrap();
        assert_eq!(c.resolvable_depth, 0.0);
        let c = depth_resolution_curve(&m, 1, 1e-300).unwrap();
        assert!((c.resolvable_depth - (1.0 - 1.0 / 400.0)).abs() < 1e-12);
    }

    #[test]
    fn depth_rate_matches_envelope() {
        // sqrt(kappa) H = 3 with kappa = mu + lambda^2 = 8 + 1
        let m = constant_medium(1001, 8.0, 2.0 * PI);
        let c = depth_resolution_curve(&m, 1, 1e-3).unwrap();
        assert!((c.predicted_rate - 6.0).abs() < 1e-9);
        assert!(c.relative_rate_error < 0.05, "{c:?}");
    }

    #[test]
    fn interpolation_chain_scaling() {
        assert_eq!(interpolation_chain(0.0, 5.0, 3.0), 0.0);
        let a = interpolation_chain(1.0, 2.0, 3.0);
        let b = interpolation_chain(4.0, 2.0, 3.0);
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn empty_report_writes_summary_only() {
        let prep = prepare(&reference_config(65, vec![], vec![], PathBuf::from("o")), None).unwrap();
        let report = StabilityReport::empty(prep.config.clone(), prep.t_final, prep.constants);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_outputs(&report, dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join(SUMMARY_JSON)]);
    }

    #[test]
    fn one_point_sweep_has_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = reference_config(65, vec![1e-3], vec![7], dir.path().to_path_buf());
        let report = run_pipeline(&cfg).unwrap();
        assert!(report.failure.is_none(), "{:?}", report.failure);
        let files = emit_outputs(&report, dir.path()).unwrap();
        assert!(files.iter().all(|p| p.exists()));
        let t = Table::read_csv(&dir.path().join(SWEEP_CSV)).unwrap();
        assert_eq!(t.n_rows(), 1);
    }
}
