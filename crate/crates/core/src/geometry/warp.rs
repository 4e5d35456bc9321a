use nalgebra::Vector3;

use super::{homography, Camera};
use crate::error::{Error, Result};
use crate::tensor::{kernels::sample, Real, Tape, Tensor, Var};

/// Coordinate used for samples that fall behind the source camera; far
/// enough outside any map that all four bilinear taps are out of bounds.
const BEHIND: f64 = -1.0e6;

/// Source-map sampling coordinates `[2, D * h, w]` for every reference
/// pixel of an `h x w` map at every depth. The cameras are given at image
/// resolution and rescaled by `scale` (e.g. `0.25` for quarter-resolution
/// feature maps).
pub fn warp_coords<T: Real>(
    reference: &Camera,
    source: &Camera,
    depths: &[f64],
    h: usize,
    w: usize,
    scale: f64,
) -> Result<Tensor<T>> {
    if depths.is_empty() {
        return Err(Error::Empty("no depth hypotheses".into()));
    }
    let r = reference.scaled(scale);
    let s = source.scaled(scale);
    let plane = h * w;
    let mut data = vec![T::zero(); 2 * depths.len() * plane];
    let (xs, ys) = data.split_at_mut(depths.len() * plane);
    for (k, &d) in depths.iter().enumerate() {
        let hm = homography(&r, &s, d)?;
        for v in 0..h {
            for u in 0..w {
                let p = hm * Vector3::new(u as f64, v as f64, 1.0);
                let i = k * plane + v * w + u;
                if p.z > 0.0 {
                    xs[i] = T::of(p.x / p.z);
                    ys[i] = T::of(p.y / p.z);
                } else {
                    xs[i] = T::of(BEHIND);
                    ys[i] = T::of(BEHIND);
                }
            }
        }
    }
    Tensor::new(&[2, depths.len() * h, w], data)
}

/// Warps a source feature map `[F, h, w]` onto the reference frustum,
/// giving `[F, D, h, w]`. Samples outside the source map are zero.
pub fn warp_to_volume<T: Real>(
    src_feat: &Tensor<T>,
    reference: &Camera,
    source: &Camera,
    depths: &[f64],
    scale: f64,
) -> Result<Tensor<T>> {
    let fs = src_feat.shape();
    if fs.len() != 3 {
        return Err(Error::Shape(format!(
            "feature map must be [F, h, w], got {fs:?}"
        )));
    }
    let (f, h, w) = (fs[0], fs[1], fs[2]);
    let coords = warp_coords::<T>(reference, source, depths, h, w, scale)?;
    let out = sample::forward(src_feat.data(), f, h, w, coords.data());
    Tensor::new(&[f, depths.len(), h, w], out)
}

/// Differentiable counterpart of [`warp_to_volume`] recorded on a tape.
pub fn warp_volume_on_tape<T: Real>(
    tape: &mut Tape<T>,
    src_feat: Var,
    reference: &Camera,
    source: &Camera,
    depths: &[f64],
    scale: f64,
) -> Result<Var> {
    let fs = tape.shape(src_feat).to_vec();
    if fs.len() != 3 {
        return Err(Error::Shape(format!(
            "feature map must be [F, h, w], got {fs:?}"
        )));
    }
    let coords = warp_coords::<T>(reference, source, depths, fs[1], fs[2], scale)?;
    let coords = tape.constant(coords);
    let sampled = tape.bilinear_sample(src_feat, coords)?;
    tape.reshape(sampled, &[fs[0], depths.len(), fs[1], fs[2]])
}
