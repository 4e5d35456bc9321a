//! Plane-sweep multi-view stereo depth inference.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: a dense tensor with a small reverse-mode tape covering exactly
//!   the operations the pipeline needs, a finite-difference checker and Adam.
//! * [`geometry`]: pinhole cameras, plane-induced homographies, depth
//!   hypotheses, volume warping and view selection.
//! * [`network`]: feature extraction, cost volume, 3D UNet regularization,
//!   soft-argmin regression, refinement, training and inference.
//! * [`postprocess`]: confidence maps, photometric/geometric filtering and
//!   fusion into a colored point cloud.
//! * [`scene`]: procedural scenes with exact ground truth and every on-disk
//!   format (PPM, PGM, PFM, PLY, camera files, scene directories).
//! * [`eval`]: accuracy/completeness distances and precision/recall/f-score.
//! * [`pipeline`]: key/value configuration and the on-disk stages from
//!   scene synthesis to the evaluation report.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (the
//! default); every parallel kernel writes disjoint outputs with a fixed
//! per-element reduction order, so results are bit-identical with and without
//! the feature.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod network;
pub mod pipeline;
pub mod postprocess;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
