//! Finite-element solver and verification harness for a degenerating
//! thermoviscoelastic system with phase transitions or damage.

pub mod acceptance;
pub mod chi_solver;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod linsolve;
pub mod material;
pub mod operators;
pub mod stepper;

pub use error::{Error, Result};
