//! Graph-matching multi-label classification.
//!
//! Instances of an image and the label vocabulary are joined into an
//! assignment graph, a graph network block scores every instance-label edge,
//! and a cross-instance max-pool turns those scores into per-image label
//! probabilities. This crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gnb;
pub mod graphs;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
