//! Membership checks for the admissible coefficient set, on a hand-built
//! medium and on seeded random media.
//!
//! cargo run --example admissibility

use patl::medium::{check_admissibility, AdmissibleBounds, CoefficientProfile, Grid1D, LayeredMedium};
use patl::random::{random_medium, RandomMediumSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> patl::error::Result<()> {
    let grid = Grid1D::new(201, 1.0)?;
    let bounds = AdmissibleBounds::new(0.5, 0.5, 2.0, 0.2)?;
    let d = CoefficientProfile::from_fn(grid, |y| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * y).sin())?;
    let wiggly = LayeredMedium::new(d, CoefficientProfile::constant(grid, 1.0)?, CoefficientProfile::constant(grid, 1.0)?, 1.0, bounds)?;
    let report = check_admissibility(&wiggly)?;
    println!("oscillating D, M = 2: pass = {}", report.pass);
    for c in &report.constraints {
        match c.location {
            Some(y) => println!("  {:<12} margin {:>10.4} at y = {y:.3}", c.name, c.margin),
            None => println!("  {:<12} margin {:>10.4}", c.name, c.margin),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = RandomMediumSpec::default();
    for _ in 0..3 {
        let m = random_medium(&mut rng, &spec)?;
        println!(
            "random medium: D in [{:.3}, {:.3}], mu_a in [{:.3}, {:.3}], admissible = {}",
            m.diffusion.min(),
            m.diffusion.max(),
            m.absorption.min(),
            m.absorption.max(),
            check_admissibility(&m)?.pass
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
