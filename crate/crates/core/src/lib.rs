//! Numerical machinery for superlinear exterior-value problems driven by the
//! fractional Laplacian: nonlocal kernel assembly on truncated grids,
//! mountain-pass critical point search, parameter-stability sweeps, and
//! desk-scale optimal control on top of the solver pipeline.

pub mod error;
pub mod par;
pub mod space;
pub mod kernel;
pub mod model;
pub mod energy;
pub mod mpt;
pub mod stability;
pub mod control;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
