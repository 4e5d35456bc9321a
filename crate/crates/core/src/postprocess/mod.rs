//! Confidence estimation, depth filtering and multi-view fusion.

mod confidence;
mod fusion;

pub use confidence::{confidence_map, photometric_filter};
pub use fusion::{
    depth_to_points, fuse, geometric_consistency, Consistency, DepthView, FilterConfig, FuseView,
    FusedPoint, FusedPointCloud,
};
