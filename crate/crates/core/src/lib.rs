//! Numerical laboratory for reaction–diffusion equations with Osgood-type
//! reaction terms and multiplicative coloured noise.
//!
//! The equation is `∂_t u = Δu + f(u) + σ(u) Ẇ` on `[0, L]^d` with Dirichlet
//! boundary conditions. Growth conditions live in [`growth`], the sine
//! spectral basis and noise in [`spectral`], time stepping in [`solver`],
//! moment and factorization diagnostics in [`stochan`], and ensemble runs
//! with their outputs in [`harness`].

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod expr;
pub mod growth;
pub mod harness;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod stochan;

#[cfg(test)]
pub(crate) mod testutil;
