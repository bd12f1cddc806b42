//! Range-decayed voxel-wise point-cloud augmentation and keypoint relation
//! supervision for semi-supervised 3D detection, with a framework-free
//! teacher-student harness.
//!
//! * [`geometry`]: boxes, BEV projection, keypoints, per-box voxels.
//! * [`augment`]: sparsify and angular order dropout with range decay.
//! * [`grs`]: feature maps, relation matrices, losses and their gradients.
//! * [`harness`]: synthetic scenes and a linear toy extractor pair.
//! * [`io`]: cloud, label and feature-map files.

// `!(a > b)` comparisons intentionally reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod geometry;
pub mod grs;
pub mod harness;
pub mod io;

pub use error::{Error, Result};
