//! Numerical workbench for input-to-state stability of time-varying evolution equations.
//!
//! The crate is organised bottom-up: comparison functions and scalar inequalities,
//! evolution families and mild solutions, Lyapunov constructions, ensemble-based
//! certification, and semi-discretized PDE examples.

pub mod certify;
pub mod compfun;
pub mod error;
pub mod evolution;
pub mod ineq;
pub mod lyapunov;
pub mod mildsolve;
pub mod numeric;
pub mod pde_examples;
pub mod rng;
pub mod timefn;

pub use error::{Error, Result};
