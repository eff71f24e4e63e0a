//! Multi-scale residual classifier (MSRC) for network-traffic anomaly
//! detection.
//!
//! Flow records are cut into sliding windows, each window is decomposed and
//! reconstructed at several wavelet levels, a normal-only stacked autoencoder
//! per level turns every reconstructed record into a reconstruction-error
//! vector, and parallel residual groups feed a small sigmoid classifier.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod nn;
pub mod plot;
pub mod residual_net;
pub mod sae;
pub mod synthetic;
pub mod wavelet;

pub use error::{Error, Result};
