//! Acceptance criteria, one line each.
//!
//! Criteria listed in `KNOWN_FAILING` are reported but do not fail the
//! target unless `PATL_STRICT_ACCEPTANCE=1`.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use patl::acoustic::{observability_constants, simulate_modal_wave, ModalInitialData, ModalPropagator, WaveConfig};
use patl::cgne::{CgneOptions, LinearOperator};
use patl::harness::{depth_resolution_curve, loglog_slope, reference_config, run_pipeline, SWEEP_CSV};
use patl::inversion_acoustic::{certify_observability, recover_modal_initial_data, relative_l2_error, TraceOperator};
use patl::inversion_optical::{invert, reporting_weight, weighted_errors, Calibration, RatioMode};
use patl::io::MediumSpec;
use patl::medium::{AdmissibleBounds, CoefficientProfile, Grid1D, LayeredMedium};
use patl::optical::{make_internal_data, smallest_admissible_mode, solve_bvp_lambda, solve_modal_bvp};
use patl::random::{random_initial_data, random_medium, RandomMediumSpec};

const KNOWN_FAILING: [usize; 2] = [5, 8];

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn data(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn bounds() -> AdmissibleBounds {
    AdmissibleBounds::new(0.5, 0.5, 1000.0, 0.2).unwrap()
}

fn uniform(n_points: usize, d: f64, mu: f64, c: f64) -> LayeredMedium {
    LayeredMedium::homogeneous(n_points, 1.0, 2.0 * PI, d, mu, c, bounds()).unwrap()
}

fn optical_exactness() -> Outcome {
    let exact = |y: f64| (2.0 * y).sinh() / 2f64.sinh();
    let err = |n: usize| {
        let m = uniform(n + 1, 1.0, 3.0, 1.0);
        let u = solve_bvp_lambda(&m, 1.0).unwrap();
        m.grid()
            .nodes()
            .zip(u.values())
            .map(|(y, v)| (v - exact(y)).abs())
            .fold(0.0, f64::max)
    };
    let fine = err(4096);
    let ns = [256usize, 512, 1024, 2048];
    let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let es: Vec<f64> = ns.iter().map(|&n| err(n)).collect();
    let order = loglog_slope(&hs, &es).unwrap();
    (
        fine < 1e-6 && (order - 2.0).abs() <= 0.2,
        format!("err(n=4096) = {fine:.2e}, order = {order:.3}"),
    )
}

fn envelope_theorem() -> Outcome {
    let spec = RandomMediumSpec::default();
    let mut pass = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_medium(&mut rng, &spec).unwrap();
        let k = smallest_admissible_mode(&m, 64).unwrap().unwrap();
        let sol = solve_modal_bvp(&m, k).unwrap();
        let (lo, hi) = (sol.envelope_lo().unwrap(), sol.envelope_hi().unwrap());
        let tol = 10.0 * m.grid().h_step().powi(2);
        let v = (0..m.grid().n_points())
            .map(|i| {
                let u = sol.u.values()[i];
                (lo.values()[i] - u).max(u - hi.values()[i])
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(v);
        if v <= tol {
            pass += 1;
        }
    }
    (pass == 100, format!("{pass}/100 media, worst violation {worst:.2e}"))
}

fn eigen_init(grid: Grid1D) -> ModalInitialData {
    ModalInitialData::new(
        0,
        CoefficientProfile::from_fn(grid, |y| (0.5 * PI * y).sin()).unwrap(),
        CoefficientProfile::zeros(grid),
    )
    .unwrap()
}

fn energy_law() -> Outcome {
    let m = uniform(1025, 1.0, 1.0, 1.0);
    let init = eigen_init(*m.grid());
    let drift = simulate_modal_wave(&m, &init, &WaveConfig::new(0.0, 4.0)).unwrap().energy.max_relative_drift();
    let defect = simulate_modal_wave(&m, &init, &WaveConfig::new(1.0, 4.0))
        .unwrap()
        .energy
        .max_identity_defect();
    (
        drift < 1e-6 && defect < 1e-4,
        format!("beta=0 drift {drift:.2e}, beta=1 identity defect {defect:.2e}"),
    )
}

fn eigenmode_error(n: usize) -> f64 {
    let m = uniform(n + 1, 1.0, 1.0, 1.0);
    let init = eigen_init(*m.grid());
    let prop = ModalPropagator::from_config(&m, 0.0, &WaveConfig::new(0.0, 4.0)).unwrap();
    let dt = prop.dt();
    let grid = *m.grid();
    let mut err: f64 = 0.0;
    prop.for_each_state(&init.f0.values()[1..], &init.f1.values()[1..], |step, p| {
        let t = step as f64 * dt;
        for (i, v) in p.iter().enumerate() {
            let exact = (0.5 * PI * grid.y(i + 1)).sin() * (0.5 * PI * t).cos();
            err = err.max((v - exact).abs());
        }
    })
    .unwrap();
    err
}

fn eigenmode_accuracy() -> Outcome {
    let fine = eigenmode_error(1024);
    let ns = [128usize, 256, 512, 1024];
    let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let es: Vec<f64> = ns.iter().map(|&n| eigenmode_error(n)).collect();
    let order = loglog_slope(&hs, &es).unwrap();
    (
        fine < 1e-4 && (order - 2.0).abs() <= 0.2,
        format!("max error (n=1024) {fine:.2e}, order {order:.3}"),
    )
}

fn observability_trials(width_l: f64) -> (usize, f64) {
    let spec = RandomMediumSpec {
        width_l,
        speed: Some((0.5, 2.0)),
        n_points: 257,
        ..Default::default()
    };
    let mut pass = 0;
    let mut worst = f64::INFINITY;
    for t in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let m = random_medium(&mut rng, &spec).unwrap();
        let beta = if t % 2 == 0 { 0.1 } else { 1.0 };
        let k = (t % 3) as i64 + 1;
        let consts = observability_constants(&m, beta).unwrap();
        let init = random_initial_data(&mut rng, *m.grid(), k, true).unwrap();
        let run = simulate_modal_wave(&m, &init, &WaveConfig::new(beta, 1.5 * consts.t_min)).unwrap();
        let cert = certify_observability(&m, &init, &run.trace, beta).unwrap();
        worst = worst.min(cert.margin / cert.rhs);
        if cert.holds(1e-8) {
            pass += 1;
        }
    }
    (pass, worst)
}

fn observability_certificates() -> Outcome {
    let (pass, worst) = observability_trials(2.0 * PI);
    let (pass_1, worst_1) = observability_trials(1.0);
    (
        pass == 100 && pass_1 == 100,
        format!("L = 2 pi: {pass}/100 trials, worst relative margin {worst:.3e} (L = 1: {pass_1}/100, worst {worst_1:.3e})"),
    )
}

fn acoustic_round_trip() -> Outcome {
    let spec = MediumSpec::load(&data("reference_medium.json")).unwrap();
    let m = spec.build_with_points(1025).unwrap();
    let beta = 1.0;
    let consts = observability_constants(&m, beta).unwrap();
    let (h1, _) = make_internal_data(&m, 1, 2).unwrap();
    let init = ModalInitialData::new(1, h1.h.clone(), CoefficientProfile::zeros(*m.grid())).unwrap();
    let trace = simulate_modal_wave(&m, &init, &WaveConfig::new(beta, 2.0 * consts.t_min)).unwrap().trace;

    let op = TraceOperator::for_trace(&m, &trace, m.wavenumber(1), beta).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..op.n_cols()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let y: Vec<f64> = (0..op.n_rows()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let ax = op.apply(&x).unwrap();
    let aty = op.apply_transpose(&y).unwrap();
    let l: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
    let r: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
    let adjoint = (l - r).abs() / l.abs().max(r.abs());

    let opts = CgneOptions {
        damping: 1e-10,
        tolerance: 1e-10,
        max_iterations: 2000,
    };
    let rec = recover_modal_initial_data(&m, &trace, beta, &opts).unwrap();
    let err = relative_l2_error(&rec.f0_rec, &h1.h);
    (
        err < 1e-3 && adjoint < 1e-10,
        format!("relative L2 error {err:.2e} ({} iterations), adjoint defect {adjoint:.2e}", rec.iterations),
    )
}

type Profile = Box<dyn Fn(f64) -> f64>;

fn optical_round_trip() -> Outcome {
    let grid = Grid1D::new(2049, 1.0).unwrap();
    let phantoms: [(&str, Profile, Profile); 3] = [
        ("constant", Box::new(|_| 1.0), Box::new(|_| 3.0)),
        ("linear D", Box::new(|y| 1.0 + 0.5 * y), Box::new(|_| 2.0)),
        ("sine mu_a", Box::new(|_| 1.0), Box::new(|y| 2.0 + 0.5 * (PI * y).sin())),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, d, mu) in &phantoms {
        let m = LayeredMedium::new(
            CoefficientProfile::from_fn(grid, d).unwrap(),
            CoefficientProfile::from_fn(grid, mu).unwrap(),
            CoefficientProfile::constant(grid, 1.0).unwrap(),
            2.0 * PI,
            bounds(),
        )
        .unwrap();
        let (h1, h2) = make_internal_data(&m, 1, 2).unwrap();
        let rec = invert(&h1, &h2, m.wavenumber(1), m.wavenumber(2), Calibration::from_medium(&m), RatioMode::Strict).unwrap();
        let w = reporting_weight(&rec, Some(&m), 1).unwrap();
        let e = weighted_errors(&rec, &m, &w);
        pass &= e.d < 1e-3 && e.mu < 1e-3;
        parts.push(format!("{name}: D {:.1e} mu_a {:.1e}", e.d, e.mu));
    }
    (pass, parts.join("; "))
}

fn holder_sweep() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = reference_config(
        257,
        vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
        (0..10).collect(),
        dir.path().to_path_buf(),
    );
    let report = run_pipeline(&cfg).unwrap();
    if let Some(f) = &report.failure {
        return (false, format!("pipeline stopped: {f}"));
    }
    let h = report.holder.unwrap();
    let (smu, sd) = (h.slope_mu.unwrap(), h.slope_d.unwrap());
    let slopes_ok = [smu, sd].iter().all(|s| (0.4..=1.0).contains(s));
    (
        slopes_ok && h.violations_eps == 0,
        format!(
            "C_emp = {:.3}, violations {}/50, slopes mu {smu:.3} D {sd:.3} (misfit form: C = {:.3}, violations {})",
            h.c_emp_eps, h.violations_eps, h.c_emp_misfit, h.violations_misfit
        ),
    )
}

fn depth_resolution() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for mu in [8.0, 35.0] {
        let m = uniform(2049, 1.0, mu, 1.0);
        let c = depth_resolution_curve(&m, 1, 1e-4).unwrap();
        pass &= c.relative_rate_error < 0.05;
        parts.push(format!("sqrt(kappa)H = {:.0}: rate error {:.2}%", (mu + 1.0f64).sqrt(), 100.0 * c.relative_rate_error));
    }
    let m = MediumSpec::load(&data("deep_medium.json")).unwrap().build().unwrap();
    let c = depth_resolution_curve(&m, 1, 1e-4).unwrap().with_truncation(&m, 2).unwrap();
    match c.untrusted_depth {
        Some(u) => {
            pass &= u > c.resolvable_depth;
            parts.push(format!("untrusted from depth {u:.3} vs resolvable depth {:.3}", c.resolvable_depth));
        }
        None => {
            pass = false;
            parts.push("no untrusted nodes flagged".into());
        }
    }
    (pass, parts.join("; "))
}

fn determinism() -> Outcome {
    let run = |dir: &std::path::Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_patl"))
            .arg("sweep")
            .arg("--config")
            .arg(data("sweep_quick.json"))
            .arg("--output-dir")
            .arg(dir)
            .env("PATL_THREADS", "4")
            .output()
            .unwrap();
        (status.status.code(), std::fs::read(dir.join(SWEEP_CSV)).ok())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, fa) = run(a.path());
    let (cb, fb) = run(b.path());
    let same = fa.is_some() && fa == fb;
    (
        same && ca == cb,
        format!("exit codes {ca:?}/{cb:?}, sweep.csv identical: {same}"),
    )
}

fn main() -> ExitCode {
    let strict = std::env::var("PATL_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let criteria: [Criterion; 10] = [
        ("optical solver exactness", optical_exactness),
        ("envelope theorem", envelope_theorem),
        ("energy law", energy_law),
        ("eigenmode accuracy", eigenmode_accuracy),
        ("observability certificates", observability_certificates),
        ("acoustic round trip", acoustic_round_trip),
        ("optical round trip", optical_round_trip),
        ("Holder sweep", holder_sweep),
        ("depth resolution", depth_resolution),
        ("determinism", determinism),
    ];
    let mut unexpected = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        let start = Instant::now();
        let (pass, detail) = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = match (pass, KNOWN_FAILING.contains(&n)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("ACCEPTANCE {n:>2} {tag}: {name}: {detail} [{secs:.1} s]");
        if !pass && (strict || !KNOWN_FAILING.contains(&n)) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
