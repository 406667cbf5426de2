//! Pose-conditioning toolkit for reference-driven character animation.
//!
//! The crate covers the pre- and post-processing around a video diffusion
//! trainer: 3D skeleton modeling, camera fitting and retargeting, training
//! augmentation, depth-correct cylinder rendering, motion-based curation and
//! the token layout file consumed by the trainer.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod camera;
pub mod cli;
pub mod error;
pub mod formats;
pub mod layout;
pub mod motion;
pub mod renderer;
pub mod skeleton;
pub mod synthetic;

pub use error::{Error, Result};
