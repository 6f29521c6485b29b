//! Command-line pipeline and local HTTP render service for two-image
//! viewpoint synthesis.

pub mod cli;
pub mod pipeline;
pub mod service;

pub use cli::run_cli;
pub use pipeline::{prepare, run_pipeline, PairConfig, PipelineError, PreparedPair};
