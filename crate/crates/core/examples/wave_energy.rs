//! Leapfrog simulation of one acoustic mode: boundary trace and energy
//! ledger, with and without boundary damping.
//!
//! cargo run --example wave_energy

use patl::acoustic::{simulate_modal_wave, ModalInitialData, WaveConfig};
use patl::medium::{AdmissibleBounds, CoefficientProfile, LayeredMedium};

pub fn run() -> patl::error::Result<()> {
    let bounds = AdmissibleBounds::new(0.5, 0.5, 10.0, 0.1)?;
    let medium = LayeredMedium::homogeneous(513, 1.0, 2.0 * std::f64::consts::PI, 1.0, 1.0, 1.0, bounds)?;
    let grid = *medium.grid();
    let f0 = CoefficientProfile::from_fn(grid, |y| (0.5 * std::f64::consts::PI * y).sin())?;
    let init = ModalInitialData::new(1, f0, CoefficientProfile::zeros(grid))?;
    for beta in [0.0, 1.0] {
        let run = simulate_modal_wave(&medium, &init, &WaveConfig::new(beta, 4.0))?;
        let e = &run.energy;
        println!(
            "beta = {beta}: dt = {:.3e}, steps = {}, E(0) = {:.6}, E(T) = {:.6}, dissipated = {:.6}",
            run.trace.dt,
            run.trace.n_steps(),
            e.energy[0],
            e.energy[e.energy.len() - 1],
            e.boundary_dissipation[e.boundary_dissipation.len() - 1]
        );
        println!("  drift {:.2e}, identity defect {:.2e}", e.max_relative_drift(), e.max_identity_defect());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
