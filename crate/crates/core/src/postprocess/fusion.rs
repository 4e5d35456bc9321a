use std::cmp::Ordering;

use nalgebra::{Vector2, Vector3};

use super::photometric_filter;
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::Camera;
use crate::scene::{DepthMap, PointCloud, RgbImage, ScalarMap};

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub prob_threshold: f64,
    pub pixel_threshold: f64,
    pub rel_depth_threshold: f64,
    pub min_consistent_views: usize,
    /// Whether the reference view counts toward `min_consistent_views`.
    pub count_reference: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.8,
            pixel_threshold: 1.0,
            rel_depth_threshold: 0.01,
            min_consistent_views: 3,
            count_reference: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prob_threshold > 0.0
            && self.pixel_threshold > 0.0
            && self.rel_depth_threshold > 0.0)
        {
            return Err(Error::InvalidArgument(
                "filter thresholds must be positive".into(),
            ));
        }
        if self.min_consistent_views < 2 {
            return Err(Error::InvalidArgument(
                "min_consistent_views must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Consistent source views a pixel needs.
    pub fn required_sources(&self) -> usize {
        if self.count_reference {
            self.min_consistent_views - 1
        } else {
            self.min_consistent_views
        }
    }
}

/// A depth map with the camera at the map's resolution.
#[derive(Clone, Copy, Debug)]
pub struct DepthView<'a> {
    pub depth: &'a DepthMap,
    pub camera: &'a Camera,
}

/// Per-pixel outcome of the cross-view reprojection test.
#[derive(Clone, Debug, PartialEq)]
pub struct Consistency {
    /// Number of consistent source views.
    pub count: Vec<usize>,
    /// Mean of the reference depth and every consistent reprojected depth;
    /// 0 where the reference depth is invalid.
    pub mean_depth: DepthMap,
    /// `(source index, source pixel index)` of each consistent match.
    pub matches: Vec<Vec<(usize, usize)>>,
}

struct Check {
    source_pixel: usize,
    reprojected_depth: f64,
    reprojection_error: f64,
}

fn reproject(
    reference: &DepthView,
    source: &DepthView,
    x: usize,
    y: usize,
    d1: f64,
) -> Option<Check> {
    let p1 = Vector2::new(x as f64, y as f64);
    let world = reference.camera.unproject(&p1, d1);
    let (pi, _) = source.camera.project(&world).ok()?;
    let (qx, qy) = (pi.x.round(), pi.y.round());
    let (w, h) = (source.depth.width, source.depth.height);
    if !(qx >= 0.0 && qy >= 0.0 && qx < w as f64 && qy < h as f64) {
        return None;
    }
    let q = qy as usize * w + qx as usize;
    if !source.depth.is_valid(q) {
        return None;
    }
    let back = source.camera.unproject(&pi, source.depth.values[q]);
    let (p_reproj, d_reproj) = reference.camera.project(&back).ok()?;
    Some(Check {
        source_pixel: q,
        reprojected_depth: d_reproj,
        reprojection_error: (p_reproj - p1).norm(),
    })
}

/// Projects every valid reference pixel into each source, looks up the
/// source depth at the nearest pixel, and projects back. A source is
/// consistent when the round trip lands within `pixel_threshold` and the
/// relative depth difference is below `rel_depth_threshold`.
pub fn geometric_consistency(
    reference: DepthView<'_>,
    others: &[DepthView<'_>],
    cfg: &FilterConfig,
) -> Result<Consistency> {
    cfg.validate()?;
    let (w, h) = (reference.depth.width, reference.depth.height);
    let rows = exec::map_indices(h, |y| {
        let mut count = Vec::with_capacity(w);
        let mut mean = Vec::with_capacity(w);
        let mut matches = Vec::with_capacity(w);
        for x in 0..w {
            let i = y * w + x;
            let mut found = Vec::new();
            if !reference.depth.is_valid(i) {
                count.push(0);
                mean.push(0.0);
                matches.push(found);
                continue;
            }
            let d1 = reference.depth.values[i];
            let mut sum = d1;
            for (s, src) in others.iter().enumerate() {
                let Some(c) = reproject(&reference, src, x, y, d1) else {
                    continue;
                };
                if c.reprojection_error < cfg.pixel_threshold
                    && (c.reprojected_depth - d1).abs() / d1 < cfg.rel_depth_threshold
                {
                    sum += c.reprojected_depth;
                    found.push((s, c.source_pixel));
                }
            }
            count.push(found.len());
            mean.push(sum / (1 + found.len()) as f64);
            matches.push(found);
        }
        (count, mean, matches)
    });
    let mut out = Consistency {
        count: Vec::with_capacity(w * h),
        mean_depth: ScalarMap::filled(w, h, 0.0),
        matches: Vec::with_capacity(w * h),
    };
    out.mean_depth.values.clear();
    for (c, m, f) in rows {
        out.count.extend(c);
        out.mean_depth.values.extend(m);
        out.matches.extend(f);
    }
    Ok(out)
}

/// One input of [`fuse`]: depth, confidence and camera at one resolution,
/// and the image at that resolution or an integer multiple of it.
#[derive(Clone, Copy, Debug)]
pub struct FuseView<'a> {
    pub depth: &'a DepthMap,
    pub confidence: &'a ScalarMap,
    pub camera: &'a Camera,
    pub image: &'a RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedPoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    /// Views agreeing on this point, the emitting view included.
    pub support: usize,
    /// Emitting view (input index) and pixel.
    pub view: usize,
    pub pixel: (usize, usize),
    /// `(view, pixel index)` of every depth merged into the point.
    pub members: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusedPointCloud {
    pub points: Vec<FusedPoint>,
}

impl FusedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_point_cloud(&self) -> PointCloud {
        let mut cloud = PointCloud::default();
        for p in &self.points {
            cloud.push(p.position, p.color);
        }
        cloud
    }
}

fn color_at(image: &RgbImage, depth: &DepthMap, x: usize, y: usize) -> [u8; 3] {
    let f = (image.width / depth.width).max(1);
    image.pixel(x * f, y * f)
}

fn check_sizes(depth: &DepthMap, image: &RgbImage) -> Result<()> {
    let f = image.width / depth.width;
    if f == 0 || image.width != f * depth.width || image.height != f * depth.height {
        return Err(Error::Shape(format!(
            "image {}x{} is not an integer multiple of depth map {}x{}",
            image.width, image.height, depth.width, depth.height
        )));
    }
    Ok(())
}

/// One colored point per valid pixel.
pub fn depth_to_points(depth: &DepthMap, camera: &Camera, image: &RgbImage) -> Result<PointCloud> {
    check_sizes(depth, image)?;
    let mut cloud = PointCloud::default();
    for y in 0..depth.height {
        for x in 0..depth.width {
            let i = y * depth.width + x;
            if depth.is_valid(i) {
                let p = camera.unproject(&Vector2::new(x as f64, y as f64), depth.values[i]);
                cloud.push(p, color_at(image, depth, x, y));
            }
        }
    }
    Ok(cloud)
}

fn camera_key(c: &Camera) -> Vec<f64> {
    let mut key: Vec<f64> = c.center().iter().copied().collect();
    key.extend(c.r.iter().copied());
    key.extend(c.k.iter().copied());
    key
}

/// Views ordered by camera pose so the result does not depend on input order.
fn canonical_order(views: &[FuseView<'_>]) -> Vec<usize> {
    let keys: Vec<Vec<f64>> = views.iter().map(|v| camera_key(v.camera)).collect();
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .iter()
            .zip(&keys[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Photometric filter, then geometric filter against all other views, then
/// unprojection of the averaged depth. Once a pixel emits a point, the
/// source pixels it matched are consumed and emit nothing themselves.
/// Views are visited in an order fixed by their camera poses.
pub fn fuse(views: &[FuseView<'_>], cfg: &FilterConfig) -> Result<FusedPointCloud> {
    cfg.validate()?;
    let needed = cfg.required_sources() + 1;
    if views.len() < needed {
        log::warn!(
            "fusion needs at least {needed} views, got {}; returning an empty cloud",
            views.len()
        );
        return Ok(FusedPointCloud::default());
    }
    for v in views {
        check_sizes(v.depth, v.image)?;
    }
    let order = canonical_order(views);
    let filtered = views
        .iter()
        .map(|v| photometric_filter(v.depth, v.confidence, cfg))
        .collect::<Result<Vec<_>>>()?;
    let depth_views: Vec<DepthView> = views
        .iter()
        .zip(&filtered)
        .map(|(v, d)| DepthView {
            depth: d,
            camera: v.camera,
        })
        .collect();

    // the consistency test itself does not depend on consumption
    let results = exec::map_indices(views.len(), |r| {
        let others: Vec<DepthView> = order
            .iter()
            .filter(|&&s| s != r)
            .map(|&s| depth_views[s])
            .collect();
        geometric_consistency(depth_views[r], &others, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut consumed: Vec<Vec<bool>> = filtered
        .iter()
        .map(|d| vec![false; d.values.len()])
        .collect();
    let mut cloud = FusedPointCloud::default();
    for &r in &order {
        let others: Vec<usize> = order.iter().copied().filter(|&s| s != r).collect();
        let res = &results[r];
        let depth = &filtered[r];
        for i in 0..depth.values.len() {
            if consumed[r][i] || !depth.is_valid(i) || res.count[i] < cfg.required_sources() {
                continue;
            }
            let (x, y) = (i % depth.width, i / depth.width);
            let mut members = vec![(r, i)];
            members.extend(res.matches[i].iter().map(|&(s, q)| (others[s], q)));
            for &(v, q) in &members {
                consumed[v][q] = true;
            }
            cloud.points.push(FusedPoint {
                position: views[r]
                    .camera
                    .unproject(&Vector2::new(x as f64, y as f64), res.mean_depth.values[i]),
                color: color_at(views[r].image, depth, x, y),
                support: members.len(),
                view: r,
                pixel: (x, y),
                members,
            });
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn cam(tx: f64) -> Camera {
        Camera::new(
            Camera::intrinsics(10.0, 10.0, 4.0, 4.0),
            Matrix3::identity(),
            Vector3::new(tx, 0.0, 0.0),
            (5.0, 20.0),
        )
        .unwrap()
    }

    #[test]
    fn integer_disparity_plane_is_exactly_consistent() {
        // f = 10, depth 10: a translation of 1 unit shifts by exactly 1 px
        let d = ScalarMap::filled(8, 8, 10.0);
        let (c0, c1, c2) = (cam(0.0), cam(1.0), cam(-1.0));
        let r = geometric_consistency(
            DepthView {
                depth: &d,
                camera: &c0,
            },
            &[
                DepthView {
                    depth: &d,
                    camera: &c1,
                },
                DepthView {
                    depth: &d,
                    camera: &c2,
                },
            ],
            &FilterConfig::default(),
        )
        .unwrap();
        for y in 0..8 {
            for x in 1..7 {
                assert_eq!(r.count[y * 8 + x], 2);
                assert_eq!(r.mean_depth.values[y * 8 + x], 10.0);
            }
        }
        // the leftmost column projects outside the source shifted by +1 px
        assert_eq!(r.count[7], 1);
    }

    #[test]
    fn perturbed_source_contributes_nothing() {
        let d = ScalarMap::filled(8, 8, 10.0);
        let bad = ScalarMap::filled(8, 8, 10.5);
        let (c0, c1) = (cam(0.0), cam(1.0));
        let r = geometric_consistency(
            DepthView {
                depth: &d,
                camera: &c0,
            },
            &[DepthView {
                depth: &bad,
                camera: &c1,
            }],
            &FilterConfig::default(),
        )
        .unwrap();
        assert!(r.count.iter().all(|&c| c == 0));
    }

    #[test]
    fn mean_of_consistent_depths() {
        // sources translated along the optical axis see the plane at other depths
        let d = ScalarMap::filled(8, 8, 10.0);
        let c0 = cam(0.0);
        let mut c1 = cam(0.0);
        c1.t.z = 0.02;
        let mut c2 = cam(0.0);
        c2.t.z = -0.02;
        let d1 = ScalarMap::filled(8, 8, 10.02);
        let d2 = ScalarMap::filled(8, 8, 9.98);
        let r = geometric_consistency(
            DepthView {
                depth: &d,
                camera: &c0,
            },
            &[
                DepthView {
                    depth: &d1,
                    camera: &c1,
                },
                DepthView {
                    depth: &d2,
                    camera: &c2,
                },
            ],
            &FilterConfig::default(),
        )
        .unwrap();
        let i = 4 * 8 + 4;
        assert_eq!(r.count[i], 2);
        assert!((r.mean_depth.values[i] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_view_fuses_to_nothing() {
        let d = ScalarMap::filled(8, 8, 10.0);
        let conf = ScalarMap::filled(8, 8, 1.0);
        let img = RgbImage::new(8, 8, vec![0; 192]).unwrap();
        let c = cam(0.0);
        let v = FuseView {
            depth: &d,
            confidence: &conf,
            camera: &c,
            image: &img,
        };
        assert!(fuse(&[v], &FilterConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn depth_to_points_on_plane() {
        let d = ScalarMap::new(2, 2, vec![3.0, 3.0, 0.0, 3.0]).unwrap();
        let img = RgbImage::new(4, 4, vec![7; 48]).unwrap();
        let pts = depth_to_points(&d, &cam(0.0), &img).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts.positions.iter().all(|p| p.z == 3.0));
        assert!(
            depth_to_points(&ScalarMap::filled(2, 2, 0.0), &cam(0.0), &img)
                .unwrap()
                .is_empty()
        );
    }
}
