//! Solvers for one-dimensional hyperbolic systems with reflection boundary
//! conditions: characteristic tracing, a semi-Lagrangian linear solver,
//! monodromy-based exponential dichotomy diagnostics, periodic solutions and
//! a quasilinear fixed-point iteration.

pub mod characteristics;
pub mod cli;
pub mod coeffs;
pub mod dichotomy;
pub mod error;
pub mod example21;
pub mod expr;
pub mod field;
pub mod linear_solver;
pub mod problem;
pub mod quasilinear;

pub use error::{Error, Result};
