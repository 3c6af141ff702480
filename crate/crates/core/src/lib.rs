//! Sparse salient-patch visual odometry.
//!
//! The crate covers the non-learned parts of a patch-based odometry
//! backend: salient patch selection on feature maps, correlation-based
//! patch tracking behind a [`correlation::FlowProvider`] interface, a
//! confidence-weighted bundle adjustment over SE(3) poses and per-patch
//! inverse depths, a generator for homography-warped training sequences,
//! the associated loss metrics, and trajectory evaluation tooling.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle_adjust;
pub mod cli;
pub mod correlation;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod homography_gen;
pub mod image;
pub mod io;
pub mod losses;
pub mod saliency;
pub mod seed;
pub mod selfcheck;
pub mod synthetic;
pub mod vo_pipeline;

pub use error::{Error, Result};
