//! Diffusion-approximation mode solution of a layered medium, with its
//! sinh envelopes.
//!
//! cargo run --example optical_mode

use patl::io::MediumSpec;
use patl::optical::solve_modal_bvp;

pub fn run() -> patl::error::Result<()> {
    let spec = MediumSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/reference_medium.json").as_ref())?;
    let medium = spec.build()?;
    for k in [1, 2, 3] {
        let sol = solve_modal_bvp(&medium, k)?;
        let (lo, hi) = (sol.envelope_lo().unwrap(), sol.envelope_hi().unwrap());
        println!("k = {k}  lambda = {:.4}  kappa in [{:.3}, {:.3}]", sol.lambda_k, sol.kappa_m(), sol.kappa_big_m());
        for i in (0..medium.grid().n_points()).step_by(64) {
            println!(
                "  y = {:.3}  {:.5} <= u = {:.5} <= {:.5}",
                medium.grid().y(i),
                lo.values()[i],
                sol.u.values()[i],
                hi.values()[i]
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
