//! Sobolev interpolation bound for the C^1 misfit of internal data,
//! with the constant calibrated on a perturbation family.
//!
//! cargo run --example interpolation_chain

use patl::harness::{calibrate_interpolation_constant, interpolation_check, perturbation_family};
use patl::io::MediumSpec;
use patl::optical::make_internal_data;

pub fn run() -> patl::error::Result<()> {
    let spec = MediumSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/reference_medium.json").as_ref())?;
    let medium = spec.build()?;
    let c = calibrate_interpolation_constant(&medium, 1, 2)?;
    println!("calibrated constant {c:.4}");
    let (a, _) = make_internal_data(&medium, 1, 2)?;
    for m in perturbation_family(&medium)?.iter().take(3) {
        let (b, _) = make_internal_data(m, 1, 2)?;
        let chk = interpolation_check(&a.h, &b.h, c)?;
        println!("|dh|_C1 = {:.3e} <= {:.3e}: {}", chk.c1_norm, chk.bound, chk.holds);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
