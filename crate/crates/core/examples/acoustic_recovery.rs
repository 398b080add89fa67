//! Recover the initial pressure of one mode from its boundary trace with
//! matrix-free CGNE, then check the adjoint.
//!
//! cargo run --example acoustic_recovery

use patl::acoustic::{simulate_modal_wave, ModalInitialData, WaveConfig};
use patl::cgne::{CgneOptions, LinearOperator};
use patl::inversion_acoustic::{recover_modal_initial_data, relative_l2_error, TraceOperator};
use patl::io::MediumSpec;
use patl::medium::CoefficientProfile;
use patl::optical::make_internal_data;

pub fn run() -> patl::error::Result<()> {
    let spec = MediumSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/reference_medium.json").as_ref())?;
    let medium = spec.build_with_points(129)?;
    let (h1, _) = make_internal_data(&medium, 1, 2)?;
    let init = ModalInitialData::new(1, h1.h.clone(), CoefficientProfile::zeros(*medium.grid()))?;
    let trace = simulate_modal_wave(&medium, &init, &WaveConfig::new(1.0, 4.0))?.trace;

    let op = TraceOperator::for_trace(&medium, &trace, medium.wavenumber(1), 1.0)?;
    let x: Vec<f64> = (0..op.n_cols()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
    let y: Vec<f64> = (0..op.n_rows()).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
    let ax = op.apply(&x)?;
    let aty = op.apply_transpose(&y)?;
    let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
    println!("adjoint test: <Ax, y> = {lhs:.12e}, <x, A^T y> = {rhs:.12e}");

    let rec = recover_modal_initial_data(&medium, &trace, 1.0, &CgneOptions::default())?;
    println!(
        "CGNE: {} iterations, converged = {}, relative L2 error of f0 = {:.3e}",
        rec.iterations,
        rec.converged,
        relative_l2_error(&rec.f0_rec, &h1.h)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
