//! Simulated interferometric reconstruction of quantum work statistics for a
//! driven qubit, with fluctuation-theorem checks.

pub mod error;
pub mod qcore;
pub mod quench;
pub mod tpm;
pub mod interferometer;
pub mod spectral;
pub mod fluct;
pub mod qpt;

pub use error::{Error, Result};
