//! Polyrepresentation learning for multi-label image classification:
//! triplet-mined siamese embeddings, wavelet-augmented 3-channel inputs,
//! radiomics features, and tabular metadata fused into one feature matrix,
//! classified with gradient-boosted trees, and explained through grouped
//! permutation importance and channel-swap ablations.

pub mod config;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod fusion;
pub mod grid;
pub mod imageproc;
pub mod mlab;
pub mod pipeline;
pub mod radiomics;
pub mod sampler;
pub mod siamese;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use grid::Grid;
