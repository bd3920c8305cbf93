//! Command-line toolchain around `focusfuse-core`: file formats, JSON
//! configuration, the end-to-end pipeline, ablations and the global-scaling
//! bench.

pub mod ablate;
pub mod bench;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod synthetic;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
