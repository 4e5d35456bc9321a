//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] owns every value produced during one forward pass. Nodes are
//! appended after their inputs, so the record is topologically ordered and
//! [`Tape::backward`] visits it in exact reverse. Leaves created with
//! `requires_grad` accumulate gradients across repeated backward calls
//! until [`Tape::zero_grad`].

use super::kernels::conv::{self, ConvDims};
use super::kernels::norm::{self, BnCache};
use super::kernels::{reduce, sample};
use super::{split_axis, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which statistics a batch-normalization node uses.
pub enum Norm<'a, T> {
    /// Batch statistics; the running statistics are updated by momentum.
    Train {
        running_mean: &'a mut [T],
        running_var: &'a mut [T],
        momentum: T,
    },
    /// Batch statistics without touching any running state.
    Batch,
    /// Stored running statistics, treated as constants.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
    /// Per-channel affine only: `gamma * x + beta`.
    Frozen,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        dims: ConvDims,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Bilinear {
        map: Var,
        coords: Var,
    },
    Variance {
        inputs: Vec<Var>,
        mean: Vec<T>,
    },
    Mean(Vec<Var>),
    Expectation {
        prob: Var,
        depths: Vec<T>,
    },
    MaskedL1 {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
        count: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Recip(Var),
    Sum(Var),
    Pick {
        x: Var,
        index: usize,
    },
    Reshape(Var),
    Concat(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    needs_grad: bool,
}

/// Record of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            needs_grad: requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- convolution -------------------------------------------------

    fn conv_impl(&mut self, x: Var, w: Var, b: Option<Var>, dims: ConvDims) -> Result<Var> {
        if let Some(b) = b {
            if self.value(b).numel() != dims.cout {
                return Err(shape_err(format!(
                    "bias has {} values for {} output channels",
                    self.value(b).numel(),
                    dims.cout
                )));
            }
        }
        let out = conv::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
        );
        let mut shape = vec![dims.cout];
        let spatial = self.value(x).shape().len() - 1;
        shape.extend_from_slice(&dims.output[3 - spatial..]);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Conv { x, w, b, dims },
            &inputs,
        ))
    }

    fn conv_dims(&self, x: Var, w: Var, stride: usize, spatial: usize) -> Result<ConvDims> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != spatial + 1 || ws.len() != spatial + 2 {
            return Err(shape_err(format!(
                "conv{spatial}d expects input [C, ...{spatial} dims] and kernel [Cout, C, ...], got {xs:?} and {ws:?}"
            )));
        }
        if ws[1] != xs[0] {
            return Err(shape_err(format!(
                "kernel expects {} input channels but input has {}",
                ws[1], xs[0]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let mut input = [1; 3];
        let mut kernel = [1; 3];
        let mut strides = [1; 3];
        for a in 0..spatial {
            input[3 - spatial + a] = xs[1 + a];
            kernel[3 - spatial + a] = ws[2 + a];
            strides[3 - spatial + a] = stride;
        }
        ConvDims::same(xs[0], ws[0], input, kernel, strides)
    }

    /// `x: [C, H, W]`, `w: [Cout, C, kh, kw]`, same padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let dims = self.conv_dims(x, w, stride, 2)?;
        self.conv_impl(x, w, b, dims)
    }

    /// `x: [C, D, H, W]`, `w: [Cout, C, kd, kh, kw]`, same padding.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let dims = self.conv_dims(x, w, stride, 3)?;
        self.conv_impl(x, w, b, dims)
    }

    fn conv_transpose(&mut self, x: Var, w: Var, stride: usize, spatial: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "transposed convolution stride must be positive".into(),
            ));
        }
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != spatial + 1 || ws.len() != spatial + 2 || ws[0] != xs[0] {
            return Err(shape_err(format!(
                "transposed conv{spatial}d expects input [C, ...] and kernel [C, Cout, ...], got {xs:?} and {ws:?}"
            )));
        }
        let mut input = [1; 3];
        let mut kernel = [1; 3];
        let mut strides = [1; 3];
        for a in 0..spatial {
            input[3 - spatial + a] = xs[1 + a] * stride;
            kernel[3 - spatial + a] = ws[2 + a];
            strides[3 - spatial + a] = stride;
        }
        let dims = ConvDims::same(ws[1], ws[0], input, kernel, strides)?;
        let out = conv::conv_adjoint(self.value(x).data(), self.value(w).data(), &dims);
        let mut shape = vec![ws[1]];
        shape.extend_from_slice(&input[3 - spatial..]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::ConvTranspose { x, w, dims },
            &[x, w],
        ))
    }

    /// Adjoint of a strided 2D convolution: `x: [C, H, W]`, `w: [C, Cout, kh, kw]`
    /// gives `[Cout, H * stride, W * stride]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        self.conv_transpose(x, w, stride, 2)
    }

    /// 3D counterpart of [`Tape::conv_transpose2d`].
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        self.conv_transpose(x, w, stride, 3)
    }

    // ---- normalization and activations -------------------------------

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: Norm<'_, T>) -> Result<Var> {
        let channels = self.shape(x)[0];
        if self.value(gamma).numel() != channels || self.value(beta).numel() != channels {
            return Err(shape_err(format!(
                "batch norm over {channels} channels needs per-channel gamma and beta"
            )));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let (y, cache, batch_stats) = match mode {
            Norm::Train {
                running_mean,
                running_var,
                momentum,
            } => {
                let (mean, var) = norm::channel_stats(xv, channels);
                let (y, cache) = norm::normalize(xv, g, b, &mean, &var);
                norm::update_running(
                    running_mean,
                    running_var,
                    &mean,
                    &var,
                    xv.len() / channels,
                    momentum,
                );
                (y, cache, true)
            }
            Norm::Batch => {
                let (mean, var) = norm::channel_stats(xv, channels);
                let (y, cache) = norm::normalize(xv, g, b, &mean, &var);
                (y, cache, true)
            }
            Norm::Eval {
                running_mean,
                running_var,
            } => {
                let (y, cache) = norm::normalize(xv, g, b, running_mean, running_var);
                (y, cache, false)
            }
            Norm::Frozen => {
                let n = xv.len() / channels;
                let y = xv
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| g[i / n] * v + b[i / n])
                    .collect();
                let cache = BnCache {
                    xhat: xv.to_vec(),
                    inv_std: vec![T::one(); channels],
                };
                (y, cache, false)
            }
        };
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(&shape, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                batch_stats,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let y = reduce::softmax(self.value(x).data(), outer, len, inner);
        Ok(self.push(
            Tensor::new(&shape, y)?,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        ))
    }

    // ---- sampling and aggregation ------------------------------------

    /// Samples `map: [C, H, W]` at `coords: [2, ...]` (x then y, pixels).
    /// Neighbors outside the map contribute zero.
    pub fn bilinear_sample(&mut self, map: Var, coords: Var) -> Result<Var> {
        let ms = self.shape(map).to_vec();
        let cs = self.shape(coords).to_vec();
        if ms.len() != 3 || cs[0] != 2 {
            return Err(shape_err(format!(
                "bilinear_sample expects map [C, H, W] and coords [2, ...], got {ms:?} and {cs:?}"
            )));
        }
        if !self.value(coords).all_finite() {
            return Err(Error::NonFinite("sampling coordinates".into()));
        }
        let out = sample::forward(
            self.value(map).data(),
            ms[0],
            ms[1],
            ms[2],
            self.value(coords).data(),
        );
        let mut shape = vec![ms[0]];
        shape.extend_from_slice(&cs[1..]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Bilinear { map, coords },
            &[map, coords],
        ))
    }

    fn same_shapes(&self, inputs: &[Var], what: &str) -> Result<Vec<usize>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Empty(format!("{what} needs at least one input")))?;
        let shape = self.shape(*first).to_vec();
        for v in inputs {
            if self.shape(*v) != shape.as_slice() {
                return Err(shape_err(format!(
                    "{what}: {:?} differs from {shape:?}",
                    self.shape(*v)
                )));
            }
        }
        Ok(shape)
    }

    /// Elementwise population variance across same-shaped inputs.
    pub fn variance_across(&mut self, inputs: &[Var]) -> Result<Var> {
        let shape = self.same_shapes(inputs, "variance_across")?;
        let slices: Vec<&[T]> = inputs.iter().map(|v| self.value(*v).data()).collect();
        let (var, mean) = reduce::variance_across(&slices);
        Ok(self.push(
            Tensor::new(&shape, var)?,
            Op::Variance {
                inputs: inputs.to_vec(),
                mean,
            },
            inputs,
        ))
    }

    /// Elementwise mean across same-shaped inputs.
    pub fn mean_across(&mut self, inputs: &[Var]) -> Result<Var> {
        let shape = self.same_shapes(inputs, "mean_across")?;
        let slices: Vec<&[T]> = inputs.iter().map(|v| self.value(*v).data()).collect();
        let mean = reduce::mean_across(&slices);
        Ok(self.push(
            Tensor::new(&shape, mean)?,
            Op::Mean(inputs.to_vec()),
            inputs,
        ))
    }

    /// Probability-weighted depth: `prob: [D, H, W]` to `[H, W]`.
    pub fn expectation(&mut self, prob: Var, depths: &[T]) -> Result<Var> {
        let ps = self.shape(prob).to_vec();
        if ps.len() != 3 || ps[0] != depths.len() {
            return Err(shape_err(format!(
                "expectation needs prob [D, H, W] with D = {}, got {ps:?}",
                depths.len()
            )));
        }
        let out = reduce::expectation(self.value(prob).data(), depths);
        Ok(self.push(
            Tensor::new(&ps[1..], out)?,
            Op::Expectation {
                prob,
                depths: depths.to_vec(),
            },
            &[prob],
        ))
    }

    /// Mean absolute difference over masked pixels; rejects an empty mask.
    pub fn masked_l1(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        if self.shape(pred) != self.shape(target) || mask.len() != self.value(pred).numel() {
            return Err(shape_err(format!(
                "masked_l1: pred {:?}, target {:?}, mask of {}",
                self.shape(pred),
                self.shape(target),
                mask.len()
            )));
        }
        let (loss, count) =
            reduce::masked_l1(self.value(pred).data(), self.value(target).data(), mask);
        if count == 0 {
            return Err(Error::Empty("mask has no valid pixels".into()));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedL1 {
                pred,
                target,
                mask: mask.to_vec(),
                count,
            },
            &[pred, target],
        ))
    }

    // ---- elementwise glue --------------------------------------------

    fn broadcast(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || self.value(b).numel() == 1 {
            Ok(sa.to_vec())
        } else if self.value(a).numel() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(shape_err(format!("{what}: {sa:?} vs {sb:?}")))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let shape = self.broadcast(a, b, what)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                f(
                    va[if va.len() == 1 { 0 } else { i }],
                    vb[if vb.len() == 1 { 0 } else { i }],
                )
            })
            .collect();
        Ok(self.push(Tensor::new(&shape, data)?, op, &[a, b]))
    }

    /// Elementwise sum; either side may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::Shift(x), &[x])
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::one() / v);
        self.push(y, Op::Recip(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Smallest element; ties resolve to the lowest index.
    pub fn min(&mut self, x: Var) -> Var {
        self.pick(x, |a, b| a < b)
    }

    /// Largest element; ties resolve to the lowest index.
    pub fn max(&mut self, x: Var) -> Var {
        self.pick(x, |a, b| a > b)
    }

    fn pick(&mut self, x: Var, better: impl Fn(T, T) -> bool) -> Var {
        let data = self.value(x).data();
        let mut index = 0;
        for (i, &v) in data.iter().enumerate() {
            if better(v, data[index]) {
                index = i;
            }
        }
        let v = data[index];
        self.push(Tensor::scalar(v), Op::Pick { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x), &[x]))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Empty("concat needs inputs".into()))?;
        let rest = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for v in inputs {
            let s = self.shape(*v);
            if s[1..] != rest[..] {
                return Err(shape_err(format!("concat: {s:?} vs trailing {rest:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(*v).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&rest);
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::Concat(inputs.to_vec()),
            inputs,
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Propagates `d root / d node` to every `requires_grad` leaf and adds
    /// it to that leaf's accumulated gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let Tape { nodes, leaf_grads } = self;
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let needs = |v: Var| nodes[v.0].needs_grad;
            let val = |v: Var| nodes[v.0].value.data();
            let mut send = |v: Var, d: Vec<T>| accumulate(&mut grads, v, d);
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        match &mut leaf_grads[i] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                Op::Conv { x, w, b, dims } => {
                    if needs(*x) {
                        send(*x, conv::conv_adjoint(&g, val(*w), dims));
                    }
                    if needs(*w) {
                        send(*w, conv::conv_kernel_grad(&g, val(*x), dims));
                    }
                    if let Some(b) = b {
                        if needs(*b) {
                            send(*b, conv::channel_sums(&g, dims.cout));
                        }
                    }
                }
                Op::ConvTranspose { x, w, dims } => {
                    if needs(*x) {
                        send(*x, conv::conv_forward(&g, val(*w), None, dims));
                    }
                    if needs(*w) {
                        send(*w, conv::conv_kernel_grad(val(*x), &g, dims));
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                    batch_stats,
                } => {
                    let (dx, dg, db) = if *batch_stats {
                        norm::backward_batch(&g, val(*gamma), cache)
                    } else {
                        norm::backward_fixed(&g, val(*gamma), cache)
                    };
                    if needs(*x) {
                        send(*x, dx);
                    }
                    if needs(*gamma) {
                        send(*gamma, dg);
                    }
                    if needs(*beta) {
                        send(*beta, db);
                    }
                }
                Op::Relu(x) => {
                    let xv = val(*x);
                    let d = g
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    send(*x, d);
                }
                Op::Softmax {
                    x,
                    outer,
                    len,
                    inner,
                } => {
                    let d = reduce::softmax_backward(node.value.data(), &g, *outer, *len, *inner);
                    send(*x, d);
                }
                Op::Bilinear { map, coords } => {
                    let ms = nodes[map.0].value.shape();
                    if needs(*map) {
                        send(
                            *map,
                            sample::map_grad(&g, ms[0], ms[1], ms[2], val(*coords)),
                        );
                    }
                    if needs(*coords) {
                        send(
                            *coords,
                            sample::coord_grad(&g, val(*map), ms[0], ms[1], ms[2], val(*coords)),
                        );
                    }
                }
                Op::Variance { inputs, mean } => {
                    let scale = T::of(2.0 / inputs.len() as f64);
                    for v in inputs {
                        if needs(*v) {
                            let d = g
                                .iter()
                                .zip(val(*v))
                                .zip(mean)
                                .map(|((&g, &x), &m)| g * scale * (x - m))
                                .collect();
                            send(*v, d);
                        }
                    }
                }
                Op::Mean(inputs) => {
                    let inv = T::of(1.0 / inputs.len() as f64);
                    for v in inputs {
                        if needs(*v) {
                            send(*v, g.iter().map(|&g| g * inv).collect());
                        }
                    }
                }
                Op::Expectation { prob, depths } => {
                    let plane = g.len();
                    let mut d = Vec::with_capacity(plane * depths.len());
                    for &depth in depths {
                        d.extend(g.iter().map(|&g| g * depth));
                    }
                    send(*prob, d);
                }
                Op::MaskedL1 {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let scale = g[0] / T::of(*count as f64);
                    let signs: Vec<T> = val(*pred)
                        .iter()
                        .zip(val(*target))
                        .zip(mask)
                        .map(|((&p, &t), &m)| {
                            if !m || p == t {
                                T::zero()
                            } else if p > t {
                                scale
                            } else {
                                -scale
                            }
                        })
                        .collect();
                    if needs(*target) {
                        send(*target, signs.iter().map(|&s| -s).collect());
                    }
                    if needs(*pred) {
                        send(*pred, signs);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let neg = matches!(node.op, Op::Sub(..));
                    if needs(*a) {
                        send(*a, reduce_to(&g, val(*a).len()));
                    }
                    if needs(*b) {
                        let mut d = reduce_to(&g, val(*b).len());
                        if neg {
                            d.iter_mut().for_each(|v| *v = -*v);
                        }
                        send(*b, d);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let at = |s: &[T], i: usize| s[if s.len() == 1 { 0 } else { i }];
                    if needs(*a) {
                        let full: Vec<T> =
                            g.iter().enumerate().map(|(i, &g)| g * at(vb, i)).collect();
                        send(*a, reduce_to(&full, va.len()));
                    }
                    if needs(*b) {
                        let full: Vec<T> =
                            g.iter().enumerate().map(|(i, &g)| g * at(va, i)).collect();
                        send(*b, reduce_to(&full, vb.len()));
                    }
                }
                Op::Scale(x, c) => send(*x, g.iter().map(|&g| g * *c).collect()),
                Op::Shift(x) | Op::Reshape(x) => send(*x, g),
                Op::Recip(x) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &y)| -g * y * y)
                        .collect();
                    send(*x, d);
                }
                Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
                Op::Pick { x, index } => {
                    let mut d = vec![T::zero(); val(*x).len()];
                    d[*index] = g[0];
                    send(*x, d);
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for v in inputs {
                        let n = val(*v).len();
                        if needs(*v) {
                            send(*v, g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += *b),
        slot @ None => *slot = Some(d),
    }
}

/// Sums a broadcast gradient back down to a single element when needed.
fn reduce_to<T: Real>(g: &[T], len: usize) -> Vec<T> {
    if len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().fold(T::zero(), |a, &b| a + b)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[3, 2], |i| i as f64));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[4], |i| i as f64 - 1.5));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        let expected: Vec<f64> = tape.value(x).data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap(), expected.as_slice());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[2], |i| i as f64));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn relu_values_and_mask() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[3], vec![-1.0, 2.0, 0.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0, 0.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[3, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[2, 4, 3, 3]));
        let err = tape.conv2d(x, w, None, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"));
    }

    #[test]
    fn transposed_conv_rejects_zero_stride() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[2, 1, 3, 3]));
        assert!(tape.conv_transpose2d(x, w, 0).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let x = tape.param(Tensor::full(&[2], 2.0));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
    }
}
