//! Std companion to `topple-core`: file formats, the dataset pipeline, the
//! experiment runner, the rating service and the `topple` command line.

pub use topple_core as core;

pub mod analyze;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod pipeline;
pub mod study;
