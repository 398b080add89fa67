//! Modal and finite-Fourier observability certificates, and the one-side
//! Holder bound, for photoacoustic initial data.
//!
//! cargo run --example observability

use patl::acoustic::{observability_constants, simulate_modal_wave, ModalInitialData, WaveConfig};
use patl::inversion_acoustic::{certify_finite_fourier, certify_observability, holder_one_side_bound, HolderVariant};
use patl::io::MediumSpec;
use patl::medium::CoefficientProfile;
use patl::optical::make_internal_data;

pub fn run() -> patl::error::Result<()> {
    let spec = MediumSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/reference_medium.json").as_ref())?;
    let medium = spec.build()?;
    let beta = 1.0;
    let constants = observability_constants(&medium, beta)?;
    println!("theta = {:.4}, T_min = {:.4}, C_M = {:.4}", constants.theta, constants.t_min, constants.c_big_m);
    let t = 1.5 * constants.t_min;
    let (h1, h2) = make_internal_data(&medium, 1, 2)?;
    let mut inits = Vec::new();
    let mut traces = Vec::new();
    for d in [h1, h2] {
        let init = ModalInitialData::new(d.k, d.h, CoefficientProfile::zeros(*medium.grid()))?;
        let trace = simulate_modal_wave(&medium, &init, &WaveConfig::new(beta, t))?.trace;
        let c = certify_observability(&medium, &init, &trace, beta)?;
        println!("mode {}: lhs {:.4} / {:.4}, rhs {:.4}, margin {:.4}", c.k, c.lhs_f0, c.lhs_grad, c.rhs, c.margin);
        inits.push(init);
        traces.push(trace);
    }
    let ff = certify_finite_fourier(&medium, &inits, &traces, beta)?;
    println!("finite Fourier: lhs {:.4}, rhs {:.4}, margin {:.4}", ff.lhs_grad_f0, ff.rhs, ff.margin);
    let hb = holder_one_side_bound(&medium, &traces, beta, 5.0, HolderVariant::Gradient, 200)?;
    println!(
        "Holder: discrete min {:.4} at N = {}, continuous min {:.4}, stated {:.4}",
        hb.discrete_min, hb.n_star, hb.continuous_min, hb.stated_bound
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
