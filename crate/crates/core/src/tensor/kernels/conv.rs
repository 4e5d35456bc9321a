//! Zero-padded strided convolution over `[C, D, H, W]` volumes.
//!
//! 2D convolution is the `D = 1`, `kd = 1` case. The transposed convolution
//! is the exact adjoint of the strided convolution and shares the scatter
//! kernel used for the convolution's input gradient.

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Real;

/// Geometry of a convolution mapping `[cin, input]` to `[cout, output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvDims {
    /// Same-padded convolution; every input extent must be divisible by its stride.
    pub fn same(
        cin: usize,
        cout: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
    ) -> Result<Self> {
        let mut output = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            if kernel[a].is_multiple_of(2) {
                return Err(Error::InvalidArgument(format!(
                    "kernel extents must be odd, got {kernel:?}"
                )));
            }
            if stride[a] == 0 {
                return Err(Error::InvalidArgument("stride must be positive".into()));
            }
            if !input[a].is_multiple_of(stride[a]) {
                return Err(Error::Shape(format!(
                    "input extents {input:?} not divisible by stride {stride:?}"
                )));
            }
            output[a] = input[a] / stride[a];
            pad[a] = kernel[a] / 2;
        }
        Ok(Self {
            cin,
            cout,
            input,
            output,
            kernel,
            stride,
            pad,
        })
    }

    pub fn input_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    pub fn output_len(&self) -> usize {
        self.cout * self.output.iter().product::<usize>()
    }

    pub fn kernel_len(&self) -> usize {
        self.cout * self.cin * self.kernel.iter().product::<usize>()
    }

    /// Range of output positions `o` along one axis for which
    /// `o * stride + k - pad` lands inside the input.
    #[inline]
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.stride[axis] as isize;
        let off = k as isize - self.pad[axis] as isize;
        let n_in = self.input[axis] as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = ((n_in - 1 - off).div_euclid(s) + 1).clamp(0, self.output[axis] as isize);
        (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
    }
}

/// `out[co, o] = bias[co] + sum_{ci, k} w[co, ci, k] * x[ci, o * s + k - p]`.
pub fn conv_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let [od_n, oh_n, ow_n] = d.output;
    let [id_n, ih_n, iw_n] = d.input;
    let [kd_n, kh_n, kw_n] = d.kernel;
    let plane_out = oh_n * ow_n;
    let plane_in = ih_n * iw_n;
    let mut out = vec![T::zero(); d.output_len()];
    let ranges_h: Vec<_> = (0..kh_n).map(|k| d.valid_range(1, k)).collect();
    let ranges_w: Vec<_> = (0..kw_n).map(|k| d.valid_range(2, k)).collect();
    exec::for_each_chunk(&mut out, plane_out, |chunk, slab| {
        let co = chunk / od_n;
        let od = chunk % od_n;
        if let Some(b) = bias {
            slab.fill(b[co]);
        }
        for ci in 0..d.cin {
            for kd in 0..kd_n {
                let id = (od * d.stride[0] + kd) as isize - d.pad[0] as isize;
                if id < 0 || id >= id_n as isize {
                    continue;
                }
                let xin = &x[(ci * id_n + id as usize) * plane_in..][..plane_in];
                let wbase = ((co * d.cin + ci) * kd_n + kd) * kh_n * kw_n;
                for kh in 0..kh_n {
                    let (oh_lo, oh_hi) = ranges_h[kh];
                    for kw in 0..kw_n {
                        let wv = w[wbase + kh * kw_n + kw];
                        let (ow_lo, ow_hi) = ranges_w[kw];
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride[1] + kh - d.pad[1];
                            let xrow = &xin[ih * iw_n..][..iw_n];
                            let orow = &mut slab[oh * ow_n..][..ow_n];
                            if d.stride[2] == 1 {
                                let iw0 = ow_lo + kw - d.pad[2];
                                let n = ow_hi - ow_lo;
                                for (o, &xv) in
                                    orow[ow_lo..ow_hi].iter_mut().zip(&xrow[iw0..iw0 + n])
                                {
                                    *o += wv * xv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * d.stride[2] + kw - d.pad[2];
                                    orow[ow] += wv * xrow[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`conv_forward`] without bias: maps `[cout, output]` back to
/// `[cin, input]`. This is both the input gradient of a convolution and the
/// forward pass of a transposed convolution.
pub fn conv_adjoint<T: Real>(g: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let [od_n, oh_n, ow_n] = d.output;
    let [id_n, ih_n, iw_n] = d.input;
    let [kd_n, kh_n, kw_n] = d.kernel;
    let plane_out = oh_n * ow_n;
    let plane_in = ih_n * iw_n;
    let mut out = vec![T::zero(); d.input_len()];
    let ranges_h: Vec<_> = (0..kh_n).map(|k| d.valid_range(1, k)).collect();
    let ranges_w: Vec<_> = (0..kw_n).map(|k| d.valid_range(2, k)).collect();
    exec::for_each_chunk(&mut out, plane_in, |chunk, slab| {
        let ci = chunk / id_n;
        let id = chunk % id_n;
        for co in 0..d.cout {
            for kd in 0..kd_n {
                let num = id as isize + d.pad[0] as isize - kd as isize;
                if num < 0 || num % d.stride[0] as isize != 0 {
                    continue;
                }
                let od = (num / d.stride[0] as isize) as usize;
                if od >= od_n {
                    continue;
                }
                let gin = &g[(co * od_n + od) * plane_out..][..plane_out];
                let wbase = ((co * d.cin + ci) * kd_n + kd) * kh_n * kw_n;
                for kh in 0..kh_n {
                    let (oh_lo, oh_hi) = ranges_h[kh];
                    for kw in 0..kw_n {
                        let wv = w[wbase + kh * kw_n + kw];
                        let (ow_lo, ow_hi) = ranges_w[kw];
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride[1] + kh - d.pad[1];
                            let grow = &gin[oh * ow_n..][..ow_n];
                            let srow = &mut slab[ih * iw_n..][..iw_n];
                            if d.stride[2] == 1 {
                                let iw0 = ow_lo + kw - d.pad[2];
                                let n = ow_hi - ow_lo;
                                for (s, &gv) in
                                    srow[iw0..iw0 + n].iter_mut().zip(&grow[ow_lo..ow_hi])
                                {
                                    *s += wv * gv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * d.stride[2] + kw - d.pad[2];
                                    srow[iw] += wv * grow[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// `dw[co, ci, k] = sum_o g[co, o] * x[ci, o * s + k - p]`.
pub fn conv_kernel_grad<T: Real>(g: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    let [od_n, oh_n, ow_n] = d.output;
    let [id_n, ih_n, iw_n] = d.input;
    let [kd_n, kh_n, kw_n] = d.kernel;
    let ksize = kd_n * kh_n * kw_n;
    let plane_out = oh_n * ow_n;
    let plane_in = ih_n * iw_n;
    let mut dw = vec![T::zero(); d.kernel_len()];
    exec::for_each_chunk(&mut dw, ksize, |chunk, block| {
        let co = chunk / d.cin;
        let ci = chunk % d.cin;
        for kd in 0..kd_n {
            for kh in 0..kh_n {
                let (oh_lo, oh_hi) = d.valid_range(1, kh);
                for kw in 0..kw_n {
                    let (ow_lo, ow_hi) = d.valid_range(2, kw);
                    let mut acc = T::zero();
                    for od in 0..od_n {
                        let id = (od * d.stride[0] + kd) as isize - d.pad[0] as isize;
                        if id < 0 || id >= id_n as isize {
                            continue;
                        }
                        let gin = &g[(co * od_n + od) * plane_out..][..plane_out];
                        let xin = &x[(ci * id_n + id as usize) * plane_in..][..plane_in];
                        for oh in oh_lo..oh_hi {
                            let ih = oh * d.stride[1] + kh - d.pad[1];
                            let grow = &gin[oh * ow_n..][..ow_n];
                            let xrow = &xin[ih * iw_n..][..iw_n];
                            for ow in ow_lo..ow_hi {
                                let iw = ow * d.stride[2] + kw - d.pad[2];
                                acc += grow[ow] * xrow[iw];
                            }
                        }
                    }
                    block[(kd * kh_n + kh) * kw_n + kw] = acc;
                }
            }
        }
    });
    dw
}

/// Per-output-channel sum, the bias gradient.
pub fn channel_sums<T: Real>(g: &[T], channels: usize) -> Vec<T> {
    let n = g.len() / channels;
    (0..channels)
        .map(|c| g[c * n..(c + 1) * n].iter().fold(T::zero(), |a, &b| a + b))
        .collect()
}
