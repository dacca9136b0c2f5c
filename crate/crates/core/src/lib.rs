//! Floquet-Bloch band structures of honeycomb Schrödinger operators, Dirac
//! points, and the effective Dirac dynamics of wave packets.

pub mod bloch;
pub mod dirac_env;
pub mod dirac_point;
pub mod error;
pub mod fft;
pub mod harness;
pub mod io;
pub mod lattice;
pub mod potential;
pub mod schrodinger;

pub use error::{Error, Result};
