//! Spectral analysis of feature geometry in toy models of superposition.
//!
//! The crate trains the tied-weight ReLU autoencoder, measures how each
//! feature's norm spreads over the eigenvalues of the frame operator,
//! classifies localized clusters as tight frames and association-scheme
//! geometries, and integrates the Gram flow induced by training.

pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod matrix_file;
pub mod model;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};

/// Version string echoed into every output.
pub const VERSION: &str = concat!("spectra ", env!("CARGO_PKG_VERSION"));
