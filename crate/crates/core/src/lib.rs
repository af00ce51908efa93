//! Nested polarized-trace preconditioners for the 2D Helmholtz equation.

pub mod artifact;
pub mod discretization;
pub mod error;
pub mod green;
pub mod krylov;
pub mod linalg;
pub mod nested;
pub mod plr;
pub mod sie;
pub mod subdomain;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
