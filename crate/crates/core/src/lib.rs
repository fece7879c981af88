//! Reconstructs the temporal order of shuffled multimodal clips.
//!
//! Frames are grouped top-down into scenes and shots with k-means over
//! learned projections, then reordered bottom-up: frames within shots, shots
//! within scenes and finally scenes, each by a beam search for the
//! maximum-weight path through a matrix of pairwise "directly before"
//! confidences produced by a trained order classifier.

pub mod cli;
pub mod cluster;
pub mod datagen;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod reorder;
pub mod seed;
pub mod types;

pub use error::{Error, Result};
