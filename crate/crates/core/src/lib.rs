//! Desk-scale numerical laboratory for conductivity imaging from partial
//! knowledge of one interior current density field.
//!
//! The crate provides:
//! - forward sigma-harmonic modeling (`solver`),
//! - geometry of injectivity and stability regions (`regions`),
//! - the projected-data decomposition and the operator L (`decomposition`),
//! - the two-stage reconstruction of the conductivity perturbation
//!   (`reconstruction`),
//! - empirical Hoelder-stability experiments (`harness`),
//! - a config-driven command line front end (`config`, `cli`).

pub mod calculus;
pub mod cli;
pub mod config;
pub mod decomposition;
pub mod error;
pub mod expr;
pub mod field;
pub mod grid;
pub mod harness;
pub mod mask;
pub mod reconstruction;
pub mod regions;
pub mod solver;

pub use error::{CdiError, Result};
