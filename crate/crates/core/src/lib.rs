//! Desk-scale quantum machine unlearning.
//!
//! Parameterized quantum circuit (PQC) classifiers and quantum-kernel ridge
//! models are trained on small classical datasets; selected samples,
//! classes or federated clients are then removed, and the removal is
//! certified by the contraction of trace distance and infidelity to a model
//! retrained without them.

pub mod audit;
pub mod data;
pub mod error;
pub mod fed;
pub mod geo;
pub mod learn;
pub mod pqc;
pub mod privacy;
pub mod qcore;
pub mod qkernel;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};
