//! Exponential loss of resolution with depth: envelope weight, fitted
//! decay rate and the depth where the reconstruction stops being trusted.
//!
//! cargo run --example depth_resolution

use patl::harness::depth_resolution_curve;
use patl::medium::{AdmissibleBounds, LayeredMedium};

pub fn run() -> patl::error::Result<()> {
    let bounds = AdmissibleBounds::new(0.5, 0.5, 1000.0, 0.1)?;
    for mu in [8.0, 35.0, 396.0] {
        let m = LayeredMedium::homogeneous(2049, 1.0, 2.0 * std::f64::consts::PI, 1.0, mu, 1.0, bounds)?;
        let c = depth_resolution_curve(&m, 1, 1e-6)?.with_truncation(&m, 2)?;
        println!(
            "mu_a = {mu}: rate {:.3} (2 sqrt(kappa) = {:.3}), resolvable depth {:.3}, untrusted below depth {:?}",
            c.fitted_rate, c.predicted_rate, c.resolvable_depth, c.untrusted_depth
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
