//! Ray-cast rendering of analytic planes and spheres.

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::texture::noise_color;
use super::{GroundTruth, RgbImage, ScalarMap, SceneBundle, View};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{Camera, DepthHypotheses, SparseTrack};

/// Textured plane through `point` with unit `normal`; bounded to a square of
/// half-size `half_extent` (measured along in-plane axes) when given.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub half_extent: Option<f64>,
    /// Disc on the plane rendered with a constant color.
    pub textureless: Option<(Vector3<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureSpec {
    /// Lowest noise frequency in cycles per scene unit.
    pub base_frequency: f64,
    pub octaves: usize,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            base_frequency: 1.0 / 40.0,
            octaves: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CameraRig {
    /// `count` cameras on a horizontal arc of `arc_deg` degrees around
    /// `look_at`, all at `elevation_deg` above it and looking at it.
    Arc {
        count: usize,
        radius: f64,
        elevation_deg: f64,
        arc_deg: f64,
        look_at: Vector3<f64>,
        focal: f64,
    },
    Explicit(Vec<Camera>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub rig: CameraRig,
    pub ground: Option<GroundPlane>,
    pub spheres: Vec<Sphere>,
    pub texture: TextureSpec,
    /// Number of depth hypotheses spanning the rendered depth range.
    pub depth_count: usize,
    /// Tracks are sampled every `track_stride` pixels along each axis.
    pub track_stride: usize,
}

impl SceneSpec {
    /// Ground plane with `spheres` randomly placed spheres resting on it,
    /// seen by `views` cameras on a 600-unit arc. Units are roughly
    /// millimetres, so depths fall around 450..800.
    pub fn toy(seed: u64, width: usize, height: usize, views: usize, spheres: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spheres = (0..spheres.clamp(1, 4))
            .map(|_| {
                let radius = rng.gen_range(45.0..75.0);
                let x = rng.gen_range(-110.0..110.0);
                let y = rng.gen_range(-70.0..90.0);
                Sphere {
                    center: Vector3::new(x, y, radius),
                    radius,
                }
            })
            .collect();
        let focal = 1.1 * width as f64;
        Self {
            seed,
            width,
            height,
            rig: CameraRig::Arc {
                count: views,
                radius: 600.0,
                elevation_deg: 40.0,
                arc_deg: 8.0 * views.saturating_sub(1) as f64,
                look_at: Vector3::new(0.0, 0.0, 30.0),
                focal,
            },
            ground: Some(GroundPlane {
                point: Vector3::zeros(),
                normal: Vector3::z(),
                half_extent: Some(420.0),
                textureless: None,
            }),
            spheres,
            texture: TextureSpec::default(),
            depth_count: 48,
            track_stride: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::InvalidArgument(
                "sphere radius must be positive".into(),
            ));
        }
        if self.depth_count < 2 {
            return Err(Error::InvalidArgument(
                "need at least two depth hypotheses".into(),
            ));
        }
        Ok(())
    }

    fn cameras(&self) -> Result<Vec<Camera>> {
        match &self.rig {
            CameraRig::Explicit(cams) => Ok(cams.clone()),
            CameraRig::Arc {
                count,
                radius,
                elevation_deg,
                arc_deg,
                look_at,
                focal,
            } => {
                if *count == 0 {
                    return Err(Error::InvalidArgument("camera rig has no cameras".into()));
                }
                let k = Camera::intrinsics(
                    *focal,
                    *focal,
                    self.width as f64 / 2.0,
                    self.height as f64 / 2.0,
                );
                let elev = elevation_deg.to_radians();
                (0..*count)
                    .map(|i| {
                        let frac = if *count == 1 {
                            0.0
                        } else {
                            i as f64 / (*count - 1) as f64 - 0.5
                        };
                        let az = (-90.0 + frac * arc_deg).to_radians();
                        let dir =
                            Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
                        // placeholder range, replaced once depths are rendered
                        Camera::look_at(
                            k,
                            look_at + dir * *radius,
                            *look_at,
                            Vector3::z(),
                            (1.0, 2.0),
                        )
                    })
                    .collect()
            }
        }
    }

    /// First surface hit along `origin + t * dir`, `t > 0`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, primitive: usize| {
            if t > 0.0 && best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    point: origin + dir * t,
                    primitive,
                });
            }
        };
        if let Some(g) = &self.ground {
            let denom = g.normal.dot(dir);
            if denom.abs() > 1e-15 {
                let t = g.normal.dot(&(g.point - origin)) / denom;
                let p = origin + dir * t;
                let inside = match g.half_extent {
                    None => true,
                    Some(h) => {
                        let (u, v) = plane_axes(&g.normal);
                        let d = p - g.point;
                        d.dot(&u).abs() <= h && d.dot(&v).abs() <= h
                    }
                };
                if inside {
                    consider(t, 0);
                }
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            let oc = origin - s.center;
            let a = dir.dot(dir);
            let half_b = dir.dot(&oc);
            let c = oc.dot(&oc) - s.radius * s.radius;
            let disc = half_b * half_b - a * c;
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            // numerically stable pair of roots
            let q = -half_b - half_b.signum() * sq;
            let (mut t0, mut t1) = (q / a, c / q);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            let t = if t0 > 0.0 { t0 } else { t1 };
            consider(t, i + 1);
        }
        best
    }

    fn shade(&self, hit: &Hit) -> [u8; 3] {
        let tex = &self.texture;
        if hit.primitive == 0 {
            if let Some((c, r)) = self.ground.as_ref().and_then(|g| g.textureless) {
                if (hit.point - c).norm() <= r {
                    return [170, 170, 170];
                }
            }
        }
        let seed = self
            .seed
            .wrapping_mul(31)
            .wrapping_add(hit.primitive as u64 * 1_000_003);
        noise_color(seed, &hit.point, tex.base_frequency, tex.octaves)
    }
}

fn plane_axes(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Ray-surface intersection. `t` equals the camera-frame depth when the
/// ray direction comes from [`Camera::ray_direction`].
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    /// 0 for the ground plane, `i + 1` for sphere `i`.
    pub primitive: usize,
}

struct Rendered {
    image: RgbImage,
    depth: Vec<f64>,
}

fn render_view(spec: &SceneSpec, cam: &Camera) -> Rendered {
    let (w, h) = (spec.width, spec.height);
    let center = cam.center();
    let rows: Vec<(Vec<u8>, Vec<f64>)> = exec::map_indices(h, |y| {
        let mut rgb = Vec::with_capacity(w * 3);
        let mut depth = Vec::with_capacity(w);
        for x in 0..w {
            let dir = cam.ray_direction(&Vector2::new(x as f64, y as f64));
            match spec.cast(&center, &dir) {
                Some(hit) => {
                    rgb.extend_from_slice(&spec.shade(&hit));
                    depth.push(hit.t);
                }
                None => {
                    rgb.extend_from_slice(&[0, 0, 0]);
                    depth.push(0.0);
                }
            }
        }
        (rgb, depth)
    });
    let mut data = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (r, d) in rows {
        data.extend(r);
        depth.extend(d);
    }
    Rendered {
        image: RgbImage {
            width: w,
            height: h,
            data,
        },
        depth,
    }
}

/// Whether `point` is the first surface hit seen from `cam`, inside the image.
fn sees(spec: &SceneSpec, cam: &Camera, point: &Vector3<f64>) -> bool {
    let Ok((px, depth)) = cam.project(point) else {
        return false;
    };
    if px.x < 0.0 || px.y < 0.0 || px.x > (spec.width - 1) as f64 || px.y > (spec.height - 1) as f64
    {
        return false;
    }
    spec.cast(&cam.center(), &cam.ray_direction(&px))
        .is_some_and(|hit| (hit.t - depth).abs() <= 1e-6 * depth)
}

/// Renders every view with exact per-pixel depth, derives a shared depth
/// range and hypotheses, and samples visibility-checked sparse tracks.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let cams = spec.cameras()?;
    let rendered: Vec<Rendered> = cams.iter().map(|c| render_view(spec, c)).collect();

    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for r in &rendered {
        for &d in r.depth.iter().filter(|&&d| d > 0.0) {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if !lo.is_finite() || !(hi > lo) {
        return Err(Error::Geometry("no camera sees any surface".into()));
    }
    let pad = 0.02 * (hi - lo);
    let range = ((lo - pad).max(lo * 0.5), hi + pad);
    let hypotheses = DepthHypotheses::spanning(range.0, range.1, spec.depth_count)?;

    let mut views = Vec::with_capacity(cams.len());
    let mut gts = Vec::with_capacity(cams.len());
    for (cam, r) in cams.into_iter().zip(rendered) {
        let camera = Camera::new(cam.k, cam.r, cam.t, range)?;
        let mask: Vec<bool> = r.depth.iter().map(|&d| d > 0.0).collect();
        gts.push(GroundTruth {
            depth: ScalarMap::new(spec.width, spec.height, r.depth)?,
            mask,
        });
        views.push(View {
            image: r.image,
            camera,
        });
    }

    let tracks = sample_tracks(spec, &views, &gts);
    Ok(SceneBundle {
        views,
        hypotheses,
        ground_truth: Some(gts),
        tracks,
    })
}

fn sample_tracks(spec: &SceneSpec, views: &[View], gts: &[GroundTruth]) -> Vec<SparseTrack> {
    let stride = spec.track_stride.max(1);
    let mut tracks = Vec::new();
    for (vi, (view, gt)) in views.iter().zip(gts).enumerate() {
        // denser sampling in the first view, sparse elsewhere
        let s = if vi == 0 { stride } else { stride * 2 };
        for y in (0..spec.height).step_by(s) {
            for x in (0..spec.width).step_by(s) {
                let i = y * spec.width + x;
                if !gt.mask[i] {
                    continue;
                }
                let point = view
                    .camera
                    .unproject(&Vector2::new(x as f64, y as f64), gt.depth.values[i]);
                let seen: BTreeSet<usize> = views
                    .iter()
                    .enumerate()
                    .filter(|(j, v)| *j == vi || sees(spec, &v.camera, &point))
                    .map(|(j, _)| j)
                    .collect();
                if seen.len() >= 2 {
                    tracks.push(SparseTrack {
                        position: point,
                        views: seen,
                    });
                }
            }
        }
    }
    tracks
}
