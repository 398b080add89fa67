use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use patl::acoustic::{initial_energy, simulate_modal_wave, BoundaryTrace, ModalInitialData, WaveConfig};
use patl::cgne::CgneOptions;
use patl::error::{Error, Result};
use patl::fd;
use patl::harness::{self, ExperimentConfig, MediumSource};
use patl::inversion_acoustic::{
    certify_finite_fourier, certify_observability, holder_one_side_bound, recover_modal_initial_data, HolderVariant,
};
use patl::inversion_optical::{invert, reporting_weight, Calibration, RatioMode};
use patl::io::{self, MediumSpec, Table};
use patl::medium::{CoefficientProfile, LayeredMedium};
use patl::optical::{solve_modal_bvp, InternalDatum};

/// Layered-media photoacoustic forward solvers, inversions and certificates.
#[derive(Parser)]
#[command(name = "patl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optical mode solution with envelopes.
    OpticalSolve(OpticalSolve),
    /// Modal wave simulation: boundary trace and energy ledger.
    AcousticSimulate(AcousticSimulate),
    /// Recover modal initial data from a boundary trace.
    AcousticInvert(AcousticInvert),
    /// Recover D and mu_a from two internal data.
    OpticalInvert(OpticalInvert),
    /// Observability / finite-Fourier / Holder certificates (JSON).
    Certify(Certify),
    /// Noise sweep of the full pipeline.
    Sweep(Sweep),
    /// Depth-resolution curve of one illumination.
    DepthCurve(DepthCurveCmd),
}

#[derive(Args)]
struct MediumArgs {
    /// Medium JSON file.
    #[arg(long)]
    medium: PathBuf,
    /// Override the grid size of the medium file.
    #[arg(long)]
    n_points: Option<usize>,
}

impl MediumArgs {
    fn load(&self) -> Result<LayeredMedium> {
        let spec = MediumSpec::load(&self.medium)?;
        match self.n_points {
            Some(n) => spec.build_with_points(n),
            None => spec.build(),
        }
    }
}

#[derive(Args)]
struct OpticalSolve {
    #[command(flatten)]
    medium: MediumArgs,
    #[arg(long, allow_negative_numbers = true)]
    k: i64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the internal datum `mu_a u` as `y,h`.
    #[arg(long)]
    out_h: Option<PathBuf>,
}

#[derive(Args)]
struct AcousticSimulate {
    #[command(flatten)]
    medium: MediumArgs,
    #[arg(long, allow_negative_numbers = true)]
    k: i64,
    /// `y,f0` CSV; defaults to the internal datum of mode k.
    #[arg(long)]
    f0: Option<PathBuf>,
    /// `y,f1` CSV; defaults to zero.
    #[arg(long)]
    f1: Option<PathBuf>,
    #[arg(long = "T")]
    t_final: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out_trace: PathBuf,
    #[arg(long)]
    out_energy: Option<PathBuf>,
}

#[derive(Args)]
struct AcousticInvert {
    #[command(flatten)]
    medium: MediumArgs,
    /// `t,p_H,pt_H` CSV.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    k: i64,
    /// Must match the trace's last time when given.
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    beta: f64,
    /// Damping of the normal equations.
    #[arg(long, default_value_t = CgneOptions::default().damping)]
    eps: f64,
    #[arg(long, default_value_t = CgneOptions::default().tolerance)]
    tol: f64,
    #[arg(long, default_value_t = CgneOptions::default().max_iterations)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OpticalInvert {
    /// `y,h1` CSV (first two columns are used).
    #[arg(long)]
    h1: PathBuf,
    #[arg(long)]
    h2: PathBuf,
    #[arg(long)]
    k1: i64,
    #[arg(long)]
    k2: i64,
    /// Width L of the strip (lambda_k = 2 pi k / L); taken from --medium if absent.
    #[arg(long = "L")]
    width_l: Option<f64>,
    /// `D_H=<v>,D_prime_H=<v>[,mu_prime_H=<v>]`; taken from --medium if absent.
    #[arg(long)]
    calib: Option<String>,
    /// Known medium: supplies L, calibration and the envelope weight.
    #[arg(long)]
    medium: Option<PathBuf>,
    /// Stop with an error instead of truncating at the first untrusted node.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CertMode {
    Observability,
    FiniteFourier,
    Holder,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Gradient,
    Velocity,
}

#[derive(Args)]
struct Certify {
    #[command(flatten)]
    medium: MediumArgs,
    #[arg(long, value_enum)]
    mode: CertMode,
    /// Modes (comma separated); observability uses the first.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "1")]
    k: Vec<i64>,
    /// `y,f0` CSV for every mode; defaults to each mode's internal datum.
    #[arg(long)]
    f0: Option<PathBuf>,
    #[arg(long)]
    f1: Option<PathBuf>,
    #[arg(long = "T")]
    t_final: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    dt: Option<f64>,
    /// A priori bound M of the Holder estimate.
    #[arg(long, default_value_t = 1.0)]
    m_tilde: f64,
    #[arg(long, value_enum, default_value = "gradient")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1000)]
    n_max: usize,
    /// Relative tolerance on the margin.
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    /// JSON output file (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    /// Experiment JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    noise_levels: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k1: Option<i64>,
    #[arg(long)]
    k2: Option<i64>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct DepthCurveCmd {
    #[command(flatten)]
    medium: MediumArgs,
    #[arg(long)]
    k1: i64,
    /// Second mode for the truncation depth of a clean reconstruction.
    #[arg(long)]
    k2: Option<i64>,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Error(Error),
    Violation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Cfl { .. } => 2,
        e if e.is_numerical() => 3,
        Error::Stage { .. } => 3,
        _ => 2,
    }
}

fn read_profile(path: &Path, medium: &LayeredMedium) -> Result<CoefficientProfile> {
    io::read_profile_csv(path, Some(*medium.grid()))
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    match out {
        Some(p) => io::write_string(p, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_trace(path: &Path, k: i64) -> Result<BoundaryTrace> {
    let t = Table::read_csv(path)?;
    let col = |name: &str| {
        t.column(name).map(<[f64]>::to_vec).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: format!("missing column `{name}`"),
        })
    };
    let times = col("t")?;
    if times.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "trace needs at least two samples".into(),
        });
    }
    Ok(BoundaryTrace {
        k,
        dt: times[1] - times[0],
        t_final: times[times.len() - 1],
        samples_p: col("p_H")?,
        samples_pt: col("pt_H")?,
    })
}

fn write_trace(path: &Path, trace: &BoundaryTrace) -> Result<()> {
    Table::new(
        &["t", "p_H", "pt_H"],
        vec![trace.times(), trace.samples_p.clone(), trace.samples_pt.clone()],
    )?
    .write_csv(path)
}

fn parse_calib(text: &str) -> Result<Calibration> {
    let (mut d_h, mut dp, mut mp) = (None, None, None);
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("calibration entry `{part}` is not key=value")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("calibration value `{value}` is not a number")))?;
        match key.trim() {
            "D_H" => d_h = Some(v),
            "D_prime_H" => dp = Some(v),
            "mu_prime_H" => mp = Some(v),
            other => return Err(Error::invalid(format!("unknown calibration key `{other}`"))),
        }
    }
    let (Some(d_h), Some(dp)) = (d_h, dp) else {
        return Err(Error::invalid("calibration needs D_H and D_prime_H"));
    };
    let mut c = Calibration::new(d_h, dp);
    c.mu_prime_h = mp;
    Ok(c)
}

fn optical_solve(a: OpticalSolve) -> CmdResult {
    let medium = a.medium.load()?;
    let sol = solve_modal_bvp(&medium, a.k)?;
    let (Some(lo), Some(hi)) = (sol.envelope_lo(), sol.envelope_hi()) else {
        return Err(Error::KTooSmall { k: a.k, kappa_m: sol.kappa_m() }.into());
    };
    Table::new(
        &["y", "u", "u_prime", "envelope_lo", "envelope_hi"],
        vec![
            medium.grid().nodes().collect(),
            sol.u.values().to_vec(),
            sol.u_prime.values().to_vec(),
            lo.values().to_vec(),
            hi.values().to_vec(),
        ],
    )?
    .write_csv(&a.out)?;
    if let Some(p) = a.out_h {
        let h = medium.absorption.zip_with(&sol.u, |m, u| m * u)?;
        io::write_profile_csv(&p, &h, "h")?;
    }
    Ok(())
}

fn acoustic_simulate(a: AcousticSimulate) -> CmdResult {
    let medium = a.medium.load()?;
    let grid = *medium.grid();
    let f0 = match &a.f0 {
        Some(p) => read_profile(p, &medium)?,
        None => {
            let sol = solve_modal_bvp(&medium, a.k)?;
            medium.absorption.zip_with(&sol.u, |m, u| m * u)?
        }
    };
    let f1 = match &a.f1 {
        Some(p) => read_profile(p, &medium)?,
        None => CoefficientProfile::zeros(grid),
    };
    let init = ModalInitialData::new(a.k, f0, f1)?;
    let config = WaveConfig {
        dt: a.dt,
        ..WaveConfig::new(a.beta, a.t_final)
    };
    let run = simulate_modal_wave(&medium, &init, &config)?;
    write_trace(&a.out_trace, &run.trace)?;
    if let Some(p) = a.out_energy {
        Table::new(
            &["t", "E", "cumulative_dissipation"],
            vec![run.energy.times.clone(), run.energy.energy.clone(), run.energy.boundary_dissipation.clone()],
        )?
        .write_csv(&p)?;
    }
    Ok(())
}

fn acoustic_invert(a: AcousticInvert) -> CmdResult {
    let medium = a.medium.load()?;
    let trace = read_trace(&a.trace, a.k)?;
    if let Some(t) = a.t_final {
        if (t - trace.t_final).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::invalid(format!("--T {t} does not match the trace's final time {}", trace.t_final)).into());
        }
    }
    let options = CgneOptions {
        max_iterations: a.max_iter,
        tolerance: a.tol,
        damping: a.eps,
    };
    let rec = recover_modal_initial_data(&medium, &trace, a.beta, &options)?;
    if rec.below_observability_time {
        eprintln!("warning: T = {} is below the observability time; recovery is not guaranteed", trace.t_final);
    }
    if !rec.converged {
        eprintln!("warning: CGNE stopped after {} iterations without converging", rec.iterations);
    }
    Table::new(
        &["y", "f0_rec", "f1_rec"],
        vec![medium.grid().nodes().collect(), rec.f0_rec.values().to_vec(), rec.f1_rec.values().to_vec()],
    )?
    .write_csv(&a.out)?;
    Ok(())
}

fn optical_invert(a: OpticalInvert) -> CmdResult {
    let medium = a.medium.as_deref().map(|p| MediumSpec::load(p)?.build()).transpose()?;
    let h1 = io::read_profile_csv(&a.h1, medium.as_ref().map(|m| *m.grid()))?;
    let h2 = io::read_profile_csv(&a.h2, Some(*h1.grid()))?;
    let width_l = match (a.width_l, &medium) {
        (Some(l), _) => l,
        (None, Some(m)) => m.width_l,
        (None, None) => return Err(Error::invalid("need --L or --medium").into()),
    };
    let calib = match (&a.calib, &medium) {
        (Some(text), _) => parse_calib(text)?,
        (None, Some(m)) => Calibration::from_medium(m),
        (None, None) => return Err(Error::invalid("need --calib or --medium").into()),
    };
    let d1 = InternalDatum::from_samples(a.k1, h1)?;
    let d2 = InternalDatum::from_samples(a.k2, h2)?;
    let lam = |k| patl::medium::wavenumber(k, width_l);
    let mode = if a.strict { RatioMode::Strict } else { RatioMode::Suffix };
    let rec = invert(&d1, &d2, lam(a.k1), lam(a.k2), calib, mode)?;
    let weight = reporting_weight(&rec, medium.as_ref(), a.k1)?;
    Table::new(
        &["y", "F", "u_rec", "D_rec", "mu_rec", "weight", "trusted"],
        vec![
            rec.f.grid().nodes().collect(),
            rec.f.values().to_vec(),
            rec.u_rec.values().to_vec(),
            rec.d_rec.values().to_vec(),
            rec.mu_rec.values().to_vec(),
            weight,
            rec.trusted.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect(),
        ],
    )?
    .write_csv(&a.out)?;
    Ok(())
}

fn certify(a: Certify) -> CmdResult {
    let medium = a.medium.load()?;
    let grid = *medium.grid();
    if a.k.is_empty() {
        return Err(Error::invalid("need at least one mode").into());
    }
    let f1 = match &a.f1 {
        Some(p) => read_profile(p, &medium)?,
        None => CoefficientProfile::zeros(grid),
    };
    let shared_f0 = a.f0.as_deref().map(|p| read_profile(p, &medium)).transpose()?;
    let config = WaveConfig {
        dt: a.dt,
        ..WaveConfig::new(a.beta, a.t_final)
    };
    let mut inits = Vec::new();
    let mut traces = Vec::new();
    for &k in &a.k {
        let f0 = match &shared_f0 {
            Some(f) => f.clone(),
            None => {
                let sol = solve_modal_bvp(&medium, k)?;
                medium.absorption.zip_with(&sol.u, |m, u| m * u)?
            }
        };
        let init = ModalInitialData::new(k, f0, f1.clone())?;
        traces.push(simulate_modal_wave(&medium, &init, &config)?.trace);
        inits.push(init);
    }
    let (report, holds) = match a.mode {
        CertMode::Observability => {
            let c = certify_observability(&medium, &inits[0], &traces[0], a.beta)?;
            let e0 = initial_energy(&medium, &inits[0], medium.wavenumber(inits[0].k))?;
            let holds = c.holds(a.rel_tol);
            let mut v = serde_json::to_value(c).map_err(|e| Error::invalid(e.to_string()))?;
            v["lhs"] = json!(c.lhs_f0.max(c.lhs_grad));
            v["initial_energy"] = json!(e0);
            (v, holds)
        }
        CertMode::FiniteFourier => {
            let c = certify_finite_fourier(&medium, &inits, &traces, a.beta)?;
            let holds = c.holds(a.rel_tol);
            let mut v = serde_json::to_value(&c).map_err(|e| Error::invalid(e.to_string()))?;
            v["lhs"] = json!(c.lhs_grad_f0.max(c.lhs_f1));
            v["constants"] = serde_json::to_value(c.modes[0].constants).map_err(|e| Error::invalid(e.to_string()))?;
            (v, holds)
        }
        CertMode::Holder => {
            let variant = match a.variant {
                VariantArg::Gradient => HolderVariant::Gradient,
                VariantArg::Velocity => HolderVariant::Velocity,
            };
            let b = holder_one_side_bound(&medium, &traces, a.beta, a.m_tilde, variant, a.n_max)?;
            let step = grid.h_step();
            let mut lhs = 0.0;
            for init in &inits {
                lhs += match variant {
                    HolderVariant::Gradient => {
                        let lam = medium.wavenumber(init.k);
                        let d = fd::derivative(init.f0.values(), step, 1)?;
                        fd::trapezoid_sq(&d, step) + lam * lam * fd::trapezoid_sq(init.f0.values(), step)
                    }
                    HolderVariant::Velocity => {
                        let w: Vec<f64> = init
                            .f1
                            .values()
                            .iter()
                            .zip(medium.inv_speed_sq().values())
                            .map(|(f, c)| f * f * c)
                            .collect();
                        fd::trapezoid(&w, step)
                    }
                };
            }
            let rhs = b.stated_bound;
            let holds = lhs <= rhs * (1.0 + a.rel_tol);
            let constants = patl::acoustic::observability_constants(&medium, a.beta)?;
            let v = json!({
                "lhs": lhs,
                "rhs": rhs,
                "margin": rhs - lhs,
                "bound": b,
                "constants": constants,
            });
            (v, holds)
        }
    };
    let mut report = report;
    report["holds"] = json!(holds);
    write_json(a.out.as_deref(), &report)?;
    if holds {
        Ok(())
    } else {
        Err(Failure::Violation(format!(
            "certificate violated: margin {}",
            report["margin"].as_f64().unwrap_or(f64::NAN)
        )))
    }
}

fn sweep(a: Sweep) -> CmdResult {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    let base = a.config.parent().map(Path::to_path_buf);
    if let Some(v) = a.output_dir {
        cfg.output_dir = v;
    }
    if let Some(v) = a.noise_levels {
        cfg.noise_levels = v;
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if a.n_points.is_some() {
        cfg.n_points = a.n_points;
    }
    if a.t_final.is_some() {
        cfg.t_final = a.t_final;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.k1 {
        cfg.k1 = v;
    }
    if let Some(v) = a.k2 {
        cfg.k2 = v;
    }
    if a.dt.is_some() {
        cfg.dt = a.dt;
    }
    if let (MediumSource::Path(p), Some(b)) = (&cfg.medium, &base) {
        if p.is_relative() {
            cfg.medium = MediumSource::Path(b.join(p));
        }
    }
    let report = harness::run_pipeline(&cfg)?;
    let files = harness::emit_outputs(&report, &cfg.output_dir)?;
    for f in &files {
        println!("{}", f.display());
    }
    if let Some(msg) = &report.failure {
        eprintln!("sweep stopped early: {msg}");
        return Err(Failure::Error(Error::Stage {
            stage: "sweep",
            source: Box::new(Error::invalid(msg.clone())),
        }));
    }
    match &report.holder {
        Some(h) if h.violations_misfit > 0 => Err(Failure::Violation(format!(
            "{} sweep points exceed C_emp * misfit^(1/4)",
            h.violations_misfit
        ))),
        _ => Ok(()),
    }
}

fn depth_curve(a: DepthCurveCmd) -> CmdResult {
    let medium = a.medium.load()?;
    let mut curve = harness::depth_resolution_curve(&medium, a.k1, a.threshold)?;
    if let Some(k2) = a.k2 {
        curve = curve.with_truncation(&medium, k2)?;
    }
    let h = medium.depth();
    Table::new(
        &["depth", "y", "weight", "resolvable"],
        vec![
            curve.y.iter().map(|y| h - y).collect(),
            curve.y.clone(),
            curve.weight.clone(),
            curve.resolvable.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect(),
        ],
    )?
    .write_csv(&a.out)?;
    let summary = serde_json::to_string(&curve).map_err(|e| Error::invalid(e.to_string()))?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::OpticalSolve(a) => optical_solve(a),
        Command::AcousticSimulate(a) => acoustic_simulate(a),
        Command::AcousticInvert(a) => acoustic_invert(a),
        Command::OpticalInvert(a) => optical_invert(a),
        Command::Certify(a) => certify(a),
        Command::Sweep(a) => sweep(a),
        Command::DepthCurve(a) => depth_curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("patl: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Error(e)) => {
            eprintln!("patl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
