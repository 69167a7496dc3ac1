//! Spherical-camera BEV perception core.
//!
//! Dual-fisheye projection, BEV ground truth from 3D boxes, pillar feature
//! pulling with coarse-to-fine sampling, focal and multi-task losses,
//! range-cropped IoU, and multi-rate sensor synchronization. Everything is
//! deterministic: parallel stages produce the same bits as sequential ones.

pub mod codec;
pub mod error;
pub mod grid;
pub mod ground_truth;
pub mod losses;
pub mod metrics;
pub mod projection;
pub mod sampling;
pub mod scene;
pub mod sync;

pub use error::{Error, Result};
