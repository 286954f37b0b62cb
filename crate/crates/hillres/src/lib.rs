//! Spectral and scattering analysis of compactly perturbed Hill operators
//! `H = −d²/dx² + p + q` on the line, with `p` 1-periodic and `q` supported in `[0, t]`.
//!
//! Momentum convention: `z = √λ`, physical sheet `Im z > 0`.

// `!(x > 0.0)` checks are deliberate (they reject NaN); index loops mirror the algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod error;
pub mod floquet;
pub mod ode;
pub mod oracle;
pub mod potential;
pub mod quad;
pub mod scattering;
pub mod states;

pub use error::{HillError, Result};
pub use num_complex::Complex64;
