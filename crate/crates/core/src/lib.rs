//! Single-shot joint object detection and discrete viewpoint estimation.
//!
//! One forward pass of a small convolutional network yields, for every
//! default box on a multi-resolution grid, class scores, box offsets, and
//! pose-bin scores. The crate covers the whole pipeline: synthetic data,
//! target assignment and the joint loss, training, inference with NMS, and
//! AP/AVP evaluation.

pub mod anchors;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod net;
pub mod nn;
pub mod raster;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
