//! Simulation and rotation optimization for cell-free massive MIMO uplinks
//! whose access points carry rotatable antenna surfaces.

pub mod antenna;
pub mod bayesopt;
pub mod benchmarks;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod receiver;
pub mod scenario;

pub use error::{Error, Result};
