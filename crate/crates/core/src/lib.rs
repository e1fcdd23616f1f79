//! Depth- and edge-aware feed-forward stylisation for real-time render
//! pipelines: training, render-loop injection and temporal evaluation.

pub mod backbones;
pub mod config;
pub mod datasets;
pub mod error;
pub mod imaging;
pub mod manifest;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod render_sim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
