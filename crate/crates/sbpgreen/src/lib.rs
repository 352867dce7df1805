//! SBP-SAT discretization matrices for the 1-D advection and heat
//! equations, together with their closed-form inverses (discrete
//! Green's functions), stability and dual-consistency classification,
//! and the borrowing-parameter machinery connecting them.

pub mod borrowing;
pub mod error;
pub mod exact;
pub mod green_first;
pub mod green_second;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod operators;
pub mod sat;
pub mod solver;

pub use error::{Error, Result};
pub use grid::Grid;
pub use matrix::DenseMatrix;
pub use operators::{build_first, build_second, FirstVariant, SecondVariant};
