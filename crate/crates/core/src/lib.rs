//! Two-step photoacoustic inversion for layered media.
//!
//! The sample occupies `(0, L) x (0, H)` with coefficients that depend on the
//! depth `y` only. Illuminating with a single Fourier mode reduces both the
//! optical diffusion problem and the acoustic wave problem to one-dimensional
//! problems in `y`, and every computation in this crate is carried out per
//! mode:
//!
//! * [`optical`] solves `-(D u')' + (mu_a + lambda_k^2 D) u = 0`, `u(0) = 0`,
//!   `u(H) = 1`, and provides the sinh comparison envelopes.
//! * [`acoustic`] integrates the damped modal wave equation with leapfrog,
//!   records boundary traces at `y = H` and tracks the energy.
//! * [`inversion_acoustic`] recovers modal initial data from boundary traces
//!   (matrix-free CGNE against the exact discrete adjoint) and evaluates the
//!   observability inequalities.
//! * [`inversion_optical`] reconstructs `(D, mu_a)` from two internal data
//!   `h_j = mu_a u_{k_j}`.
//! * [`harness`] composes the two inversions into noise sweeps and depth
//!   resolution studies and writes CSV, JSON and gnuplot files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustic;
pub mod cgne;
pub mod error;
pub mod fd;
pub mod harness;
pub mod inversion_acoustic;
pub mod inversion_optical;
pub mod io;
pub mod medium;
pub mod optical;
pub mod random;
pub mod smoothing;
pub mod tridiag;

pub use error::{Error, Result};
pub use medium::{wavenumber, AdmissibleBounds, CoefficientProfile, Grid1D, LayeredMedium};
