//! Progressive adaptation learning for unsupervised re-identification.
//!
//! Labeled source data is style-transferred into the target domain, an encoder
//! is trained on it, and the encoder is then refined over several rounds of
//! density clustering on unlabeled target data with weighted soft labels.

pub mod clusterer;
pub mod config;
pub mod encoder;
pub mod error;
pub mod io;
pub mod metrics;
pub mod output;
pub mod pipeline;
mod stats;
pub mod synthgen;
pub mod transfer;
pub mod wls;

pub use error::{Error, Result};
pub use pipeline::{run_ablation, run_on_benchmark, run_pal, run_variant, PipelineConfig, PipelineReport, RunError, Variant};
pub use synthgen::{generate_benchmark, Benchmark, BenchmarkConfig};
