//! Bilinear sampling with zero contribution from out-of-bounds neighbors.

use crate::exec;
use crate::tensor::Real;

/// The four neighbors of a continuous position with their weights; `None`
/// marks a neighbor outside the map.
#[inline]
fn taps<T: Real>(x: T, y: T, w: usize, h: usize) -> ([Option<usize>; 4], T, T) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0.as_f64();
    let yi = y0.as_f64();
    let at = |dx: f64, dy: f64| -> Option<usize> {
        let cx = xi + dx;
        let cy = yi + dy;
        if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
            None
        } else {
            Some(cy as usize * w + cx as usize)
        }
    };
    (
        [at(0.0, 0.0), at(1.0, 0.0), at(0.0, 1.0), at(1.0, 1.0)],
        fx,
        fy,
    )
}

#[inline]
fn tap<T: Real>(plane: &[T], i: Option<usize>) -> T {
    i.map_or(T::zero(), |i| plane[i])
}

/// Samples `map[C, H, W]` at `coords[2, P]` (x then y, pixel units) into `[C, P]`.
pub fn forward<T: Real>(map: &[T], channels: usize, h: usize, w: usize, coords: &[T]) -> Vec<T> {
    let points = coords.len() / 2;
    let (xs, ys) = coords.split_at(points);
    let mut out = vec![T::zero(); channels * points];
    exec::for_each_chunk(&mut out, points, |c, row| {
        let plane = &map[c * h * w..(c + 1) * h * w];
        for (p, o) in row.iter_mut().enumerate() {
            let (t, fx, fy) = taps(xs[p], ys[p], w, h);
            let one = T::one();
            let top = (one - fx) * tap(plane, t[0]) + fx * tap(plane, t[1]);
            let bottom = (one - fx) * tap(plane, t[2]) + fx * tap(plane, t[3]);
            *o = (one - fy) * top + fy * bottom;
        }
    });
    out
}

/// Gradient with respect to the sampled map.
pub fn map_grad<T: Real>(g: &[T], channels: usize, h: usize, w: usize, coords: &[T]) -> Vec<T> {
    let points = coords.len() / 2;
    let (xs, ys) = coords.split_at(points);
    let mut dmap = vec![T::zero(); channels * h * w];
    exec::for_each_chunk(&mut dmap, h * w, |c, plane| {
        let grow = &g[c * points..(c + 1) * points];
        for p in 0..points {
            let gv = grow[p];
            if gv == T::zero() {
                continue;
            }
            let (t, fx, fy) = taps(xs[p], ys[p], w, h);
            let one = T::one();
            let weights = [
                (one - fx) * (one - fy),
                fx * (one - fy),
                (one - fx) * fy,
                fx * fy,
            ];
            for (i, wt) in t.iter().zip(weights) {
                if let Some(i) = i {
                    plane[*i] += gv * wt;
                }
            }
        }
    });
    dmap
}

/// Gradient with respect to the sampling coordinates, laid out like `coords`.
pub fn coord_grad<T: Real>(
    g: &[T],
    map: &[T],
    channels: usize,
    h: usize,
    w: usize,
    coords: &[T],
) -> Vec<T> {
    let points = coords.len() / 2;
    let (xs, ys) = coords.split_at(points);
    let per_point: Vec<(T, T)> = exec::map_indices(points, |p| {
        let (t, fx, fy) = taps(xs[p], ys[p], w, h);
        let one = T::one();
        let mut dx = T::zero();
        let mut dy = T::zero();
        for c in 0..channels {
            let gv = g[c * points + p];
            let plane = &map[c * h * w..(c + 1) * h * w];
            let v00 = tap(plane, t[0]);
            let v10 = tap(plane, t[1]);
            let v01 = tap(plane, t[2]);
            let v11 = tap(plane, t[3]);
            dx += gv * ((one - fy) * (v10 - v00) + fy * (v11 - v01));
            dy += gv * ((one - fx) * (v01 - v00) + fx * (v11 - v10));
        }
        (dx, dy)
    });
    let mut out = vec![T::zero(); coords.len()];
    for (p, (dx, dy)) in per_point.into_iter().enumerate() {
        out[p] = dx;
        out[points + p] = dy;
    }
    out
}
