//! File formats, checkpoints, run configuration and the command-line driver
//! around `graphmatch-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod report;

pub use error::{Error, Result};
