//! Core algorithms for the block-tower stability workbench.
//!
//! Everything here is pure computation over in-memory values: scene
//! generation, rigid-body simulation, stability labelling, rasterization, the
//! convolutional classifier and the evaluation arithmetic. File formats, the
//! dataset pipeline and the rating service live in the `topple` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod collide;
pub mod dataset;
pub mod eval;
pub mod learn;
pub mod lp;
pub mod math;
pub mod physics;
pub mod render;
pub mod scene;
pub mod stability;
