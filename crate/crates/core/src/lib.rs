//! Neural quantum embedding with one-clean-qubit (DQC1) fidelity estimation.

pub mod cli;
pub mod data;
pub mod dqc1;
pub mod embedder;
pub mod error;
pub mod featuremap;
pub mod metrics;
pub mod nqe;
pub mod pqc;
pub mod qmath;
pub mod rng;

pub use error::{Error, Result};
