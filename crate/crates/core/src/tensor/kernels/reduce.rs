//! Softmax, multi-view aggregation and depth regression kernels.

use crate::exec;
use crate::tensor::Real;

const CHUNK: usize = 4096;

/// Softmax over the middle axis of an `[outer, len, inner]` layout, with
/// max subtraction.
pub fn softmax<T: Real>(x: &[T], _outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    exec::for_each_chunk(&mut y, len * inner, |o, block| {
        let src = &x[o * len * inner..(o + 1) * len * inner];
        for i in 0..inner {
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(src[k * inner + i]);
            }
            let mut z = T::zero();
            for k in 0..len {
                let e = (src[k * inner + i] - m).exp();
                block[k * inner + i] = e;
                z += e;
            }
            for k in 0..len {
                block[k * inner + i] = block[k * inner + i] / z;
            }
        }
    });
    y
}

/// `dx = y * (g - sum_k g * y)` along the softmax axis.
pub fn softmax_backward<T: Real>(
    y: &[T],
    g: &[T],
    _outer: usize,
    len: usize,
    inner: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    exec::for_each_chunk(&mut dx, len * inner, |o, block| {
        let base = o * len * inner;
        for i in 0..inner {
            let mut dot = T::zero();
            for k in 0..len {
                let j = base + k * inner + i;
                dot += g[j] * y[j];
            }
            for k in 0..len {
                let j = base + k * inner + i;
                block[k * inner + i] = y[j] * (g[j] - dot);
            }
        }
    });
    dx
}

/// Sum of the values in ascending order, so the result depends only on the
/// multiset of inputs and not on their order.
#[inline]
fn ordered_sum<T: Real>(buf: &mut [T]) -> T {
    buf.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    buf.iter().fold(T::zero(), |a, &b| a + b)
}

/// Elementwise mean over same-length inputs.
pub fn mean_across<T: Real>(inputs: &[&[T]]) -> Vec<T> {
    let n = inputs[0].len();
    let count = T::of(inputs.len() as f64);
    let mut out = vec![T::zero(); n];
    exec::for_each_chunk(&mut out, CHUNK, |c, block| {
        let mut buf = vec![T::zero(); inputs.len()];
        for (j, o) in block.iter_mut().enumerate() {
            let i = c * CHUNK + j;
            for (b, v) in buf.iter_mut().zip(inputs) {
                *b = v[i];
            }
            *o = ordered_sum(&mut buf) / count;
        }
    });
    out
}

/// Elementwise population variance `(1/N) sum_i (v_i - mean)^2`, and the mean.
pub fn variance_across<T: Real>(inputs: &[&[T]]) -> (Vec<T>, Vec<T>) {
    let n = inputs[0].len();
    let count = T::of(inputs.len() as f64);
    let mean = mean_across(inputs);
    let mut out = vec![T::zero(); n];
    exec::for_each_chunk(&mut out, CHUNK, |c, block| {
        let mut buf = vec![T::zero(); inputs.len()];
        for (j, o) in block.iter_mut().enumerate() {
            let i = c * CHUNK + j;
            for (b, v) in buf.iter_mut().zip(inputs) {
                let d = v[i] - mean[i];
                *b = d * d;
            }
            *o = ordered_sum(&mut buf) / count;
        }
    });
    (out, mean)
}

/// `out[p] = sum_d depths[d] * prob[d, p]`.
pub fn expectation<T: Real>(prob: &[T], depths: &[T]) -> Vec<T> {
    let plane = prob.len() / depths.len();
    let mut out = vec![T::zero(); plane];
    exec::for_each_chunk(&mut out, CHUNK, |c, block| {
        for (j, o) in block.iter_mut().enumerate() {
            let p = c * CHUNK + j;
            let mut acc = T::zero();
            for (d, &depth) in depths.iter().enumerate() {
                acc += depth * prob[d * plane + p];
            }
            *o = acc;
        }
    });
    out
}

/// Mean absolute error over the pixels where `mask` is set.
pub fn masked_l1<T: Real>(pred: &[T], target: &[T], mask: &[bool]) -> (T, usize) {
    let mut acc = T::zero();
    let mut count = 0;
    for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            acc += (p - t).abs();
            count += 1;
        }
    }
    (acc / T::of(count.max(1) as f64), count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_form() {
        let y = softmax(&[0.0f64, 3f64.ln()], 1, 2, 1);
        assert!((y[0] - 0.25).abs() < 1e-15);
        assert!((y[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn variance_of_two_scalars() {
        let (v, m) = variance_across(&[&[1.0f64][..], &[3.0][..]]);
        assert_eq!(v, vec![1.0]);
        assert_eq!(m, vec![2.0]);
    }

    #[test]
    fn masked_l1_ignores_masked_pixels() {
        let (l, n) = masked_l1(&[1.0f64, 5.0, 9.0], &[3.0, 0.0, 0.0], &[true, false, false]);
        assert_eq!((l, n), (2.0, 1));
    }
}
