//! Differentiable 3D Gaussian splatting for cross-view scene reconstruction.
// Negated float comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adc;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod image;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod voxel;

pub use error::{Error, Result};
