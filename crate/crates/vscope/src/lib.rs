//! Periodic pseudo-spectral Navier-Stokes runs plus the diagnostics built on
//! top of them: smooth space-time cutoffs, certified ball covers, ensemble
//! averages of the vortex-stretching term against local enstrophy budgets,
//! and level-set sparseness measurements.
//!
//! Everything lives on the torus [0, 2*pi)^3 by default (any box length is
//! supported). Fields are plain `Vec<f64>` in x-fastest order; spectral data
//! mirrors that layout with full complex modes.

pub mod covers;
pub mod cutoffs;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod numeric;
pub mod solver;
pub mod sparseness;
pub mod spectral;

pub use error::{Result, VscopeError};
pub use grid::Grid;
