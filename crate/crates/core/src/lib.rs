//! Pseudospectral laboratory for the low-Mach-number limit of the full
//! compressible Navier–Stokes equations with revised Maxwell stress
//! relaxation on the periodic box.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod incompressible;
pub mod relaxed;
pub mod spectral;
pub mod state;
pub mod symmetrizer;

pub use error::{Error, Result};
