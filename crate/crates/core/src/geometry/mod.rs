//! Pinhole cameras, plane-induced homographies and plane-sweep warping.

mod camera;
mod homography;
mod hypotheses;
mod view_select;
mod warp;

pub use camera::Camera;
pub use homography::{homography, infinite_homography};
pub use hypotheses::DepthHypotheses;
pub use view_select::{
    pair_score, piecewise_gaussian, select_source_views, SparseTrack, ViewSelectionParams,
};
pub use warp::{warp_coords, warp_to_volume, warp_volume_on_tape};

pub use nalgebra::{Matrix3, Vector2, Vector3};
