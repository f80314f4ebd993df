//! Marcus-form stochastic Hamiltonian systems driven by Lévy noise.

pub mod averaging;
pub mod cli;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod hamiltonian;
pub mod levy;
pub mod marcus;
pub mod rng;
pub mod stats;

mod quadrature;

pub use error::{Error, Result};
