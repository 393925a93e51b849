//! Core library for grid-based spatial analysis of point events.
//!
//! The pipeline turns raw event records into an occupied-cell grid, connects
//! nearby cells into a weighted proximity graph, and trains a from-scratch
//! graph convolutional network to classify each cell's dominant event type.
//! Kernel-density and RBF-SVM baselines plus metric/heat-map exports round
//! out the toolkit.

pub mod artifact;
pub mod baselines;
pub mod error;
pub mod features;
pub mod gcn;
pub mod geo;
pub mod graph;
pub mod heatmap;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod spatial_index;

pub use error::{Error, Result};
