//! Procedural scenes with exact ground truth, and the on-disk formats.

mod cam_file;
mod dir;
mod image;
mod pfm;
mod ply;
mod pnm;
mod render;
mod texture;

pub use cam_file::{format_cam, parse_cam, read_cam, write_cam};
pub use dir::{load_scene_dir, save_scene_dir, view_file_stem};
pub use image::{PointCloud, RgbImage, ScalarMap};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ply::{encode_ply, read_ply, write_ply};
pub use pnm::{read_pgm_mask, read_ppm, write_pgm_mask, write_ppm};
pub use render::{generate_scene, CameraRig, GroundPlane, Hit, SceneSpec, Sphere, TextureSpec};

use crate::geometry::{Camera, DepthHypotheses, SparseTrack};

/// Per-pixel depth in scene units; zero marks an invalid pixel.
pub type DepthMap = ScalarMap;

/// One input view.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: RgbImage,
    pub camera: Camera,
}

/// Exact depth of the first surface hit, and which pixels hit a surface.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub depth: DepthMap,
    pub mask: Vec<bool>,
}

/// Everything known about a scene: views, shared depth sampling, optional
/// ground truth and sparse tracks for view selection.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub views: Vec<View>,
    pub hypotheses: DepthHypotheses,
    pub ground_truth: Option<Vec<GroundTruth>>,
    pub tracks: Vec<SparseTrack>,
}

impl SceneBundle {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    /// Ground-truth surface points from every view, taking every
    /// `stride`-th pixel along each axis.
    pub fn ground_truth_cloud(&self, stride: usize) -> Option<PointCloud> {
        let gts = self.ground_truth.as_ref()?;
        let stride = stride.max(1);
        let mut cloud = PointCloud::default();
        for (view, gt) in self.views.iter().zip(gts) {
            let w = gt.depth.width;
            for y in (0..gt.depth.height).step_by(stride) {
                for x in (0..w).step_by(stride) {
                    let i = y * w + x;
                    if gt.mask[i] {
                        let p = nalgebra::Vector2::new(x as f64, y as f64);
                        cloud
                            .positions
                            .push(view.camera.unproject(&p, gt.depth.values[i]));
                        cloud.colors.push(view.image.pixel(x, y));
                    }
                }
            }
        }
        Some(cloud)
    }
}
