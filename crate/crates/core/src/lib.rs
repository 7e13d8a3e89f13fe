//! Numerical toolkit for the Monge-Ampere equation and quadratic-cost
//! optimal transport.

pub mod brenier;
pub mod dirichlet;
pub mod error;
pub mod grid;
pub mod homogenization;
pub mod io;
pub mod jko;
pub mod linalg;
pub mod numeric;
pub mod periodic;
pub mod transport;
pub mod verify;
pub mod vorticity;

pub use error::{Error, Result};
