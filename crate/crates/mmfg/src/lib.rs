//! Particle-based solver for major/minor mean field games via the
//! stochastic maximum principle.
#![forbid(unsafe_code)]

pub mod error;
pub mod fbsde;
pub mod hamiltonian;
pub mod measure;
pub mod mfg;
pub mod model;
pub mod nplayer;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
