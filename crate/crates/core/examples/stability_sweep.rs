//! Full pipeline under trace noise: optical forward, acoustic forward,
//! noise, CGNE, optical inversion; writes CSV, JSON and gnuplot files.
//!
//! cargo run --release --example stability_sweep [output_dir]

use std::path::{Path, PathBuf};

use patl::harness::{emit_outputs, reference_config, run_pipeline};

pub fn run() -> patl::error::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("patl_sweep"));
    run_in(&dir)
}

pub fn run_in(dir: &Path) -> patl::error::Result<()> {
    let cfg = reference_config(129, vec![1e-4, 1e-3, 1e-2], vec![0, 1, 2], dir.to_path_buf());
    let report = run_pipeline(&cfg)?;
    for l in &report.levels {
        println!(
            "eps {:.0e}: mean err mu {:.3e}, D {:.3e}, misfit^1/4 {:.3e}",
            l.epsilon, l.mean_err_mu, l.mean_err_d, l.mean_rhs_bound
        );
    }
    if let Some(h) = &report.holder {
        println!("slopes: mu {:?}, D {:?}; violations {}", h.slope_mu, h.slope_d, h.violations_misfit);
    }
    for p in emit_outputs(&report, dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run().unwrap();
}
