//! Pipeline driver library behind the `hotspot` binary.
//!
//! Each stage reads its upstream artifacts from the work directory, writes
//! content-addressed outputs (stage prefix + config hash), and refuses to
//! mix artifacts produced under different configurations.

pub mod ablate;
pub mod config;
pub mod error;
pub mod stages;
pub mod synth;

pub use config::PipelineConfig;
pub use error::PipelineError;
pub use stages::{run_stage, Stage};
