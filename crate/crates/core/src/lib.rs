//! Quantized compressive sensing engine.
//!
//! Simulates `y = Q(Mx + n)`, evaluates the noise-perturbed quantized
//! likelihood and its gradient, and reconstructs signals with a multi-stage
//! likelihood-gradient projection followed by pluggable refinement operators,
//! including a dual-domain spatial/spectral state-space block.

pub mod error;
pub mod likelihood;
pub mod quantizer;
pub mod sensing;

pub use error::{QcsError, Result};
pub mod activation;
pub mod spectral;
pub mod checks;
pub mod dmb;
pub mod unfold;
pub mod io;
pub mod metrics;
pub mod cli;
pub mod experiments;
