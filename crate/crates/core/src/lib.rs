//! Adaptive interior-penalty discontinuous Galerkin solver for
//! convection-diffusion-reaction problems with exponential fitting, a
//! weighted a posteriori error estimator, and a Boussinesq coupling to a
//! Taylor–Hood Stokes solver.

pub mod adaptivity;
pub mod basis;
pub mod boussinesq;
pub mod cg;
pub mod coef;
pub mod config;
pub mod error;
pub mod estimator;
pub mod fem;
pub mod fitting;
pub mod ipdg;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod quadrature;
pub mod run;
pub mod scenario;
pub mod stokes;

pub use error::{Error, Result};
