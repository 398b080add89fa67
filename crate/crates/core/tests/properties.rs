use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patl::acoustic::{observability_constants, simulate_modal_wave, ModalInitialData, WaveConfig};
use patl::cgne::LinearOperator;
use patl::harness::{depth_resolution_curve, loglog_slope};
use patl::inversion_acoustic::TraceOperator;
use patl::inversion_optical::{build_ratio, invert, reporting_weight, stability_diagnostics, weighted_errors, Calibration, RatioMode};
use patl::io::Table;
use patl::medium::{check_admissibility, wavenumber, AdmissibleBounds, CoefficientProfile, Grid1D, LayeredMedium};
use patl::optical::{make_internal_data, smallest_admissible_mode, solve_modal_bvp};
use patl::random::{random_medium, RandomMediumSpec};
use patl::smoothing::{project_h3_ball, third_derivative_norm};

fn spec(n_points: usize, speed: Option<(f64, f64)>) -> RandomMediumSpec {
    RandomMediumSpec {
        n_points,
        width_l: 2.0 * PI,
        speed,
        ..Default::default()
    }
}

fn medium(seed: u64, n_points: usize, speed: Option<(f64, f64)>) -> LayeredMedium {
    random_medium(&mut ChaCha8Rng::seed_from_u64(seed), &spec(n_points, speed)).unwrap()
}

fn bounds() -> AdmissibleBounds {
    AdmissibleBounds::new(0.5, 0.5, 1000.0, 0.2).unwrap()
}

fn h1_dist(a: &[f64], b: &[f64], step: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let l2: f64 = d.iter().map(|v| v * v).sum::<f64>() * step;
    let grad: f64 = d.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / step;
    (l2 + grad).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Exact additivity is out of reach in floating point; a few ulps is.
    #[test]
    fn wavenumber_is_linear(a in -50i64..50, b in -50i64..50, l in 0.1f64..20.0) {
        let sum = wavenumber(a, l) + wavenumber(b, l);
        let direct = wavenumber(a + b, l);
        prop_assert!((sum - direct).abs() <= 4.0 * f64::EPSILON * (wavenumber(a, l).abs() + wavenumber(b, l).abs()));
        prop_assert_eq!(wavenumber(-a, l), -wavenumber(a, l));
    }

    #[test]
    fn admissibility_is_monotone_in_bounds(seed in 0u64..1000, relax in 1.0f64..3.0) {
        let m = medium(seed, 129, Some((0.5, 2.0)));
        prop_assert!(check_admissibility(&m).unwrap().pass);
        let mut looser = m.clone();
        looser.bounds = AdmissibleBounds::new(m.bounds.d0 / relax, m.bounds.mu0 / relax, m.bounds.m_cap * relax, m.bounds.c_m / relax).unwrap();
        prop_assert!(check_admissibility(&looser).unwrap().pass);
        let mut tighter = m.clone();
        tighter.bounds.d0 = m.diffusion.min() * relax + 1e-9;
        prop_assert!(!check_admissibility(&tighter).unwrap().pass);
    }

    #[test]
    fn resampling_keeps_lower_bound_verdicts(seed in 0u64..1000, shift in -0.3f64..0.3) {
        let mut m = medium(seed, 257, Some((0.5, 2.0)));
        m.bounds.d0 = m.diffusion.min() + shift;
        m.bounds.mu0 = m.absorption.min() - shift;
        prop_assume!(m.bounds.d0 > 0.0 && m.bounds.mu0 > 0.0);
        let fine = m.resampled(1025).unwrap();
        let (a, b) = (check_admissibility(&m).unwrap(), check_admissibility(&fine).unwrap());
        for name in ["D_lower", "mu_a_lower", "c_inv_sq_lower"] {
            prop_assert_eq!(a.constraint(name).unwrap().margin >= 0.0, b.constraint(name).unwrap().margin >= 0.0);
        }
    }

    #[test]
    fn optical_mode_is_bracketed_and_increasing(seed in 0u64..1000, extra in 0i64..3) {
        let m = medium(seed, 257, None);
        let k = smallest_admissible_mode(&m, 64).unwrap().unwrap() + extra;
        let sol = solve_modal_bvp(&m, k).unwrap();
        let (lo, hi) = (sol.envelope_lo().unwrap(), sol.envelope_hi().unwrap());
        let tol = 10.0 * m.grid().h_step().powi(2);
        for i in 0..m.grid().n_points() {
            let u = sol.u.values()[i];
            prop_assert!(lo.values()[i] - u <= tol && u - hi.values()[i] <= tol);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&u));
        }
        prop_assert!(sol.u_prime.min() > 0.0);
    }

    #[test]
    fn mode_concentrates_near_the_boundary(mu in 5.0f64..60.0) {
        let m = LayeredMedium::homogeneous(1025, 1.0, 2.0 * PI, 1.0, mu, 1.0, bounds()).unwrap();
        let sol = solve_modal_bvp(&m, 1).unwrap();
        let s = (mu + 1.0).sqrt();
        for &y in &[0.25, 0.5, 0.75] {
            let i = (y * 1024.0) as usize;
            let bound = 2.0 * (-s * (1.0 - y)).exp();
            prop_assert!(sol.u.values()[i] <= bound);
        }
    }

    #[test]
    fn observability_constants_are_grid_independent(seed in 0u64..1000, beta in 0.0f64..2.0) {
        let m = medium(seed, 513, Some((0.5, 2.0)));
        let a = observability_constants(&m, beta).unwrap();
        let b = observability_constants(&m.resampled(2049).unwrap(), beta).unwrap();
        prop_assert!((a.theta - b.theta).abs() <= 1e-3 * b.theta);
        prop_assert!((a.c_big_m - b.c_big_m).abs() <= 1e-2 * b.c_big_m);
        prop_assert!((a.t_min - b.t_min).abs() <= 1e-3 * b.t_min);
    }

    #[test]
    fn observability_constants_exact_for_constant_speed(c in 0.5f64..2.0, beta in 0.0f64..2.0, n in 9usize..200) {
        let coarse = LayeredMedium::homogeneous(n, 1.0, 2.0 * PI, 1.0, 1.0, c, bounds()).unwrap();
        let fine = LayeredMedium::homogeneous(4 * n - 3, 1.0, 2.0 * PI, 1.0, 1.0, c, bounds()).unwrap();
        let (a, b) = (observability_constants(&coarse, beta).unwrap(), observability_constants(&fine, beta).unwrap());
        for (x, y) in [(a.theta, b.theta), (a.c_big_m, b.c_big_m), (a.t_min, b.t_min), (a.c_m1, b.c_m1), (a.c_m3, b.c_m3)] {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn velocity_factor_decreases_in_time(seed in 0u64..1000, beta in 0.0f64..2.0, s in 1.01f64..5.0, ds in 0.01f64..3.0) {
        let m = medium(seed, 129, Some((0.5, 2.0)));
        let c = observability_constants(&m, beta).unwrap();
        let t = s * c.t_min;
        prop_assert!(c.velocity_factor(t + ds) < c.velocity_factor(t));
        prop_assert!(c.velocity_factor(t) > beta);
        prop_assert!(c.velocity_factor(c.t_min).is_infinite());
    }

    #[test]
    fn trace_operator_adjoint(seed in 0u64..1000, k in 0i64..4, beta in 0.0f64..2.0) {
        let m = medium(seed, 65, Some((0.5, 2.0)));
        let trace = simulate_modal_wave(&m, &ModalInitialData::zero(k, *m.grid()), &WaveConfig::new(beta, 3.0)).unwrap().trace;
        let op = TraceOperator::for_trace(&m, &trace, m.wavenumber(k), beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x: Vec<f64> = (0..op.n_cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..op.n_rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l: f64 = op.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let r: f64 = x.iter().zip(&op.apply_transpose(&y).unwrap()).map(|(a, b)| a * b).sum();
        prop_assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()));
    }

    #[test]
    fn energy_identity(seed in 0u64..1000, k in 0i64..4, beta in 0.0f64..2.0,
                       a in proptest::collection::vec(-1.0f64..1.0, 3), b in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let m = medium(seed, 257, Some((0.5, 2.0)));
        let grid = *m.grid();
        // f0(0) = f0'(H) = 0 and f1(0) = f1(H) = 0: compatible with both boundary conditions.
        let f0 = CoefficientProfile::from_fn(grid, |y| a.iter().enumerate().map(|(j, c)| c * ((2 * j + 1) as f64 * 0.5 * PI * y).sin()).sum()).unwrap();
        let f1 = CoefficientProfile::from_fn(grid, |y| b.iter().enumerate().map(|(j, c)| c * ((j + 1) as f64 * PI * y).sin()).sum()).unwrap();
        prop_assume!(f0.max_abs() + f1.max_abs() > 0.1);
        let init = ModalInitialData::new(k, f0, f1).unwrap();
        let run = simulate_modal_wave(&m, &init, &WaveConfig::new(beta, 4.0)).unwrap();
        prop_assert!(run.energy.max_identity_defect() < 1e-3, "defect {}", run.energy.max_identity_defect());
        let e = &run.energy.energy;
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-3)));
    }

    #[test]
    fn matched_damping_absorbs(c in 0.5f64..2.0) {
        let m = LayeredMedium::homogeneous(513, 1.0, 2.0 * PI, 1.0, 1.0, c, bounds()).unwrap();
        let consts = observability_constants(&m, 1.0 / c).unwrap();
        let grid = *m.grid();
        let bump = CoefficientProfile::from_fn(grid, |y| (-(y - 0.5f64).powi(2) / 0.01).exp() - (-25.0f64).exp()).unwrap();
        let init = ModalInitialData::new(0, bump, CoefficientProfile::zeros(grid)).unwrap();
        let run = simulate_modal_wave(&m, &init, &WaveConfig::new(1.0 / c, 1.5 * consts.t_min)).unwrap();
        let e = &run.energy.energy;
        prop_assert!(e[e.len() - 1] <= 0.01 * e[0]);
    }

    #[test]
    fn ratio_is_increasing_and_f_positive(seed in 0u64..1000) {
        let m = medium(seed, 513, None);
        let k1 = smallest_admissible_mode(&m, 64).unwrap().unwrap().max(1);
        let (h1, h2) = make_internal_data(&m, k1, k1 + 1).unwrap();
        let r = build_ratio(&h1, &h2).unwrap();
        prop_assert!(r.h_prime.values()[1..].iter().all(|&v| v > 0.0));
        let rec = invert(&h1, &h2, m.wavenumber(k1), m.wavenumber(k1 + 1), Calibration::from_medium(&m), RatioMode::Strict).unwrap();
        prop_assert!(rec.f.values()[1..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn projection_onto_h3_ball_is_nonexpansive(seed in 0u64..1000, amp in 1e-5f64..1e-2) {
        let n = 257;
        let step = 1.0 / (n - 1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rng.random_range(1.0..3.0);
        let clean: Vec<f64> = (0..n).map(|i| (a * i as f64 * step).sinh()).collect();
        let noisy: Vec<f64> = clean
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { 0.0 } else { v + amp * rng.random_range(-1.0..1.0) })
            .collect();
        let bound = 2.0 * third_derivative_norm(&clean, step);
        let p = project_h3_ball(&noisy, step, bound).unwrap();
        prop_assert!(p.third_norm <= bound * (1.0 + 1e-6));
        prop_assert!(h1_dist(&p.values, &clean, step) <= h1_dist(&noisy, &clean, step) * (1.0 + 1e-9));
    }

    #[test]
    fn csv_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let idx: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
        let t = Table::new(&["i", "v"], vec![idx, values]).unwrap();
        t.write_csv(&path).unwrap();
        prop_assert_eq!(Table::read_csv(&path).unwrap(), t);
    }

    #[test]
    fn resolvable_depth_shrinks_with_absorption(mu in 2.0f64..100.0, factor in 1.5f64..4.0) {
        let curve = |mu: f64| {
            let m = LayeredMedium::homogeneous(1025, 1.0, 2.0 * PI, 1.0, mu, 1.0, bounds()).unwrap();
            depth_resolution_curve(&m, 1, 1e-3).unwrap().resolvable_depth
        };
        prop_assert!(curve(mu * factor) <= curve(mu));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn optical_reconstruction_is_lipschitz(seed in 0u64..1000, j in 1usize..4) {
        let m = medium(seed, 513, None);
        let grid = *m.grid();
        let weight = |y: f64| (j as f64 * PI * y).cos();
        let perturbed = |delta: f64| {
            let mut p = m.clone();
            p.absorption = CoefficientProfile::from_fn(grid, weight).unwrap()
                .zip_with(&m.absorption, |b, mu| mu + delta * b).unwrap();
            p
        };
        let (h1, h2) = make_internal_data(&m, 1, 2).unwrap();
        let cal = Calibration::from_medium(&m);
        let rec = invert(&h1, &h2, m.wavenumber(1), m.wavenumber(2), cal, RatioMode::Strict).unwrap();
        let w = reporting_weight(&rec, Some(&m), 1).unwrap();
        let mut data_norms = Vec::new();
        let mut lhs = Vec::new();
        for delta in [1e-4, 1e-3, 1e-2] {
            let p = perturbed(delta);
            let (g1, g2) = make_internal_data(&p, 1, 2).unwrap();
            let rec_p = invert(&g1, &g2, p.wavenumber(1), p.wavenumber(2), cal, RatioMode::Strict).unwrap();
            let s = stability_diagnostics(&rec, &rec_p, (&h1, &h2), (&g1, &g2), &w).unwrap();
            data_norms.push(s.mu_diff.data_norm);
            lhs.push(s.mu_diff.lhs);
        }
        let slope = loglog_slope(&data_norms, &lhs).unwrap();
        prop_assert!(slope >= 0.9, "slope {}", slope);
    }
}

#[test]
fn optical_round_trip_converges() {
    let errs: Vec<f64> = [257usize, 513, 1025]
        .iter()
        .map(|&n| {
            let grid = Grid1D::new(n, 1.0).unwrap();
            let m = LayeredMedium::new(
                CoefficientProfile::from_fn(grid, |y| 1.0 + 0.2 * y).unwrap(),
                CoefficientProfile::from_fn(grid, |y| 2.0 + 0.5 * (PI * y).sin()).unwrap(),
                CoefficientProfile::constant(grid, 1.0).unwrap(),
                2.0 * PI,
                bounds(),
            )
            .unwrap();
            let (h1, h2) = make_internal_data(&m, 1, 2).unwrap();
            let rec = invert(&h1, &h2, 1.0, 2.0, Calibration::from_medium(&m), RatioMode::Strict).unwrap();
            let w = reporting_weight(&rec, Some(&m), 1).unwrap();
            let e = weighted_errors(&rec, &m, &w);
            e.d.max(e.mu)
        })
        .collect();
    let hs = [1.0 / 256.0, 1.0 / 512.0, 1.0 / 1024.0];
    let order = loglog_slope(&hs, &errs).unwrap();
    assert!(order >= 1.0, "order {order}, errors {errs:?}");
}

#[test]
fn acoustic_round_trip_converges() {
    use patl::cgne::CgneOptions;
    use patl::inversion_acoustic::{recover_modal_initial_data, relative_l2_error};
    // Data from a fine grid, inverted on coarser ones.
    let fine_n = 2049;
    let make = |n: usize| {
        let grid = Grid1D::new(n, 1.0).unwrap();
        LayeredMedium::new(
            CoefficientProfile::constant(grid, 1.0).unwrap(),
            CoefficientProfile::constant(grid, 1.0).unwrap(),
            CoefficientProfile::from_fn(grid, |y| 1.0 + 0.25 * y).unwrap(),
            2.0 * PI,
            bounds(),
        )
        .unwrap()
    };
    let f0 = |y: f64| y * y * (3.0 - 2.0 * y);
    let fine = make(fine_n);
    let init = ModalInitialData::new(1, CoefficientProfile::from_fn(*fine.grid(), f0).unwrap(), CoefficientProfile::zeros(*fine.grid())).unwrap();
    let t = 2.0 * observability_constants(&fine, 1.0).unwrap().t_min;
    // A step count divisible by every subsampling ratio keeps the coarse
    // traces on the same time grid.
    let limit = patl::acoustic::stability_limit(&fine, fine.wavenumber(1));
    let steps = ((t / (0.9 * limit)) / 16.0).ceil() as usize * 16;
    let config = WaveConfig::new(1.0, t).with_dt(t / steps as f64);
    let fine_trace = simulate_modal_wave(&fine, &init, &config).unwrap().trace;
    let errs: Vec<f64> = [129usize, 257, 513]
        .iter()
        .map(|&n| {
            let m = make(n);
            let ratio = (fine_n - 1) / (n - 1);
            let mut trace = fine_trace.clone();
            trace.samples_p = fine_trace.samples_p.iter().step_by(ratio).copied().collect();
            trace.samples_pt = fine_trace.samples_pt.iter().step_by(ratio).copied().collect();
            trace.dt = fine_trace.dt * ratio as f64;
            let rec = recover_modal_initial_data(&m, &trace, 1.0, &CgneOptions::default()).unwrap();
            relative_l2_error(&rec.f0_rec, &CoefficientProfile::from_fn(*m.grid(), f0).unwrap())
        })
        .collect();
    let hs = [1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0];
    let order = loglog_slope(&hs, &errs).unwrap();
    assert!(order >= 1.0, "order {order}, errors {errs:?}");
}
