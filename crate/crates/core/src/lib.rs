//! Symmetry-reduction pricing engine for power options whose volatility,
//! interest rate and dividend yield vary in time.
//!
//! The crate computes the Lie point symmetries of the pricing PDE, checks
//! them against their determining equations and against the generator's
//! characteristic, reduces the PDE along the resulting invariants, and
//! validates everything against Crank–Nicolson and Monte Carlo oracles.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod coefficients;
pub mod model;
pub mod numerics;
pub mod oracles;
pub mod reduction;
pub mod special_functions;
pub mod symmetry;

pub use error::{Error, Result};
