//! Simulator for privacy-preserving distributed average consensus.
//!
//! The crate covers the adaptive differentially quantized subspace
//! perturbation protocol (ADQSP), its additive-secret-sharing and
//! local-DP baselines, passive-adversary reconstruction attacks, and
//! nonparametric mutual-information estimation of the resulting leakage.

pub mod adversary;
pub mod consensus;
pub mod error;
pub mod harness;
pub mod infotheory;
pub mod protocols;
pub mod quantizer;
pub mod seed;
pub mod topology;
pub mod transcript;

pub use error::Error;
