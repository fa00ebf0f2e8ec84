//! Numerical laboratory for the semiclassical Helmholtz equation
//!
//! ```text
//! (H_h - E) u_h = f_h,    H_h = -h^2 Δ + V1(x) - i h V2(x)
//! ```
//!
//! where the absorption index `V2` is allowed to change sign. The crate
//! provides the classical Hamiltonian flow of `p(x, ξ) = ξ² + V1(x)`, the
//! weak damping condition on trapped trajectories, an escape function,
//! weighted resolvent scans on truncated grids, a limiting-absorption
//! outgoing solver, and two independent routes to the semiclassical measure
//! of the outgoing solution (transport of the source along the flow, and
//! Weyl pairings of the computed PDE solution).
//!
//! Weights follow the convention `⟨x⟩ = (1 + |x|)^{1/2}` throughout.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cutoff;
pub mod damping;
pub mod error;
pub mod flow;
pub mod helmholtz;
pub mod linalg;
pub mod measure;
pub mod operator;
pub mod potentials;
pub mod resolvent;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// The weight `⟨x⟩ = (1 + |x|)^{1/2}`.
#[inline]
pub fn bracket(x: &[f64]) -> f64 {
    (1.0 + norm(x)).sqrt()
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
