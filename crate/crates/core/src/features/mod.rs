//! Conventional feature pipelines: hand-crafted statistics with spectral
//! peaks, and per-channel codebooks with hard or soft assignment.

mod codebook;
mod handcrafted;
mod kmeans;

pub use codebook::{Codebook, CodebookConfig};
pub use handcrafted::{hc_features, hc_features_batch, HC_PER_CHANNEL};
pub use kmeans::{kmeans_fit, KMeansFit};
