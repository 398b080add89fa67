//! Recover D and mu_a from two internal data with the boundary
//! calibration D(H), D'(H).
//!
//! cargo run --example optical_inversion

use patl::inversion_optical::{invert, reporting_weight, weighted_errors, Calibration, RatioMode};
use patl::io::MediumSpec;
use patl::optical::make_internal_data;

pub fn run() -> patl::error::Result<()> {
    let spec = MediumSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/reference_medium.json").as_ref())?;
    let medium = spec.build_with_points(1025)?;
    let (h1, h2) = make_internal_data(&medium, 1, 2)?;
    let rec = invert(&h1, &h2, medium.wavenumber(1), medium.wavenumber(2), Calibration::from_medium(&medium), RatioMode::Strict)?;
    let w = reporting_weight(&rec, Some(&medium), 1)?;
    let e = weighted_errors(&rec, &medium, &w);
    println!("weighted errors: D {:.3e}, mu_a {:.3e}", e.d, e.mu);
    for i in (0..medium.grid().n_points()).step_by(128) {
        println!(
            "  y = {:.3}  D {:.5} / {:.5}   mu_a {:.5} / {:.5}",
            medium.grid().y(i),
            medium.diffusion.values()[i],
            rec.d_rec.values()[i],
            medium.absorption.values()[i],
            rec.mu_rec.values()[i]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
