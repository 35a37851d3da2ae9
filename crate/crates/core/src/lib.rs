//! Asymmetric residual network (ARN) for wearable-sensor activity
//! recognition: a narrow path over a short sliding window and a wide path
//! over a long one, fused by concatenation before a soft-max classifier.
//!
//! The crate also carries the baseline models (MLP, CNN, LSTM, hybrid,
//! autoencoder, single-path ResNet), the hand-crafted and codebook feature
//! pipelines, windowing and ingestion of sensor sequences, and weighted-F1
//! evaluation, all on a small deterministic reverse-mode autodiff engine.

pub mod error;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
