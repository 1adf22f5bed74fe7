//! Optimal and feedback control of convection-cooling by incompressible
//! Stokes flows on the unit square.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the triangular and stencil algebra they implement
#![allow(clippy::needless_range_loop)]

pub mod anderson;
pub mod app;
pub mod error;
pub mod feedback;
pub mod grid;
pub mod initial;
pub mod io;
pub mod linsolve;
pub mod objective;
pub mod optimize;
pub mod pde;
pub(crate) mod spectral;
pub mod stokes;

pub use error::{Error, ErrorCategory, Result};
