//! Exact and numerical machinery for the Depauw divergence-free field.
//!
//! The field `b(t, x) = u(2^k x)` for `2^{-k-1} < t <= 2^{-k}` is built from a
//! square rotor `w` periodised over the even lattice, so that each time stage
//! rotates the "filled" squares of scale `2^{-k}` by a quarter turn. Everything
//! here is pure computation:
//!
//! - [`dyadic`] and [`geometry`]: exact dyadic arithmetic on the period-2 torus,
//!   dyadic cells and lattices.
//! - [`field`]: pointwise evaluation of `w`, `u`, `b`, its truncation and the
//!   stage stream functions.
//! - [`exact_flow`]: closed-form flow maps in exact arithmetic.
//! - [`density`]: exact transport of piecewise-constant checkerboard densities
//!   and a Monte Carlo weak-form residual.
//! - [`mollify`]: divergence-free smooth approximations built from mollified
//!   stream functions.
//! - [`tracer`]: RK4 integration and path ensembles.
//! - [`measures`]: marginals, stopping maps, bounded-Lipschitz distances and
//!   disintegration estimators.
//!
//! The crate is `no_std` and only needs `alloc`. IO, file formats and the
//! parallel runner live in the `depauw` companion crate.
#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod density;
pub mod dyadic;
pub mod error;
pub mod exact_flow;
pub mod field;
pub mod geometry;
pub mod math;
pub mod measures;
pub mod mollify;
pub mod quadrature;
pub mod rng;
pub mod tracer;

pub use dyadic::Dyadic;
pub use error::{Error, Result};
pub use field::{DepauwField, StageIndex};
pub use geometry::{Cell, Lattice, LatticeKind, Point, TorusPoint};
pub use mollify::MollifiedField;
pub use tracer::{Path, PathEnsemble};

/// Side length of the periodic domain `[0, 2)^2`.
pub const PERIOD: f64 = 2.0;

/// Supremum of `|b|`: the rotor speed `4 r` peaks at `r = 1/2`.
pub const SUP_NORM: f64 = 2.0;
