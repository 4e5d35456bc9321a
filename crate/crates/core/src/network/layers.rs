//! Binding named parameters to tape leaves, and the layer building blocks.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::params::{is_buffer, Params};
use crate::error::Result;
use crate::tensor::{Norm, Real, Tape, Var};

/// How normalization layers behave during one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormMode {
    /// Batch statistics, running statistics updated by `momentum`.
    Train { momentum: f64 },
    /// Batch statistics, running statistics untouched.
    Batch,
    /// Running statistics.
    Eval,
    /// Affine only.
    Frozen,
}

/// Parameters placed on a tape for one forward pass. Each parameter becomes
/// a single leaf, so weight sharing across views accumulates gradients.
pub struct Binding<'p, T> {
    params: &'p mut Params<T>,
    vars: BTreeMap<String, Var>,
    mode: NormMode,
    requires_grad: bool,
}

impl<'p, T: Real> Binding<'p, T> {
    pub fn new(params: &'p mut Params<T>, mode: NormMode, requires_grad: bool) -> Self {
        Self {
            params,
            vars: BTreeMap::new(),
            mode,
            requires_grad,
        }
    }

    pub fn var(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.params.get(name)?.clone();
        let v = tape.leaf(value, self.requires_grad && !is_buffer(name));
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `var` for parameter `name` instead of a fresh leaf.
    pub fn set(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    /// The leaf bound to `name`, if the forward pass used it.
    pub fn bound(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradient of every trainable parameter; unused parameters get zeros.
    pub fn gradients(&self, tape: &Tape<T>) -> BTreeMap<String, Vec<T>> {
        self.params
            .tensors
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(n, t)| {
                let g = self
                    .vars
                    .get(n)
                    .and_then(|&v| tape.grad(v))
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); t.numel()]);
                (n.clone(), g)
            })
            .collect()
    }

    pub fn conv2d(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        prefix: &str,
        stride: usize,
        bias: bool,
    ) -> Result<Var> {
        let w = self.var(tape, &format!("{prefix}.weight"))?;
        let b = if bias {
            Some(self.var(tape, &format!("{prefix}.bias"))?)
        } else {
            None
        };
        tape.conv2d(x, w, b, stride)
    }

    pub fn conv3d(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        prefix: &str,
        stride: usize,
        bias: bool,
    ) -> Result<Var> {
        let w = self.var(tape, &format!("{prefix}.weight"))?;
        let b = if bias {
            Some(self.var(tape, &format!("{prefix}.bias"))?)
        } else {
            None
        };
        tape.conv3d(x, w, b, stride)
    }

    pub fn conv_transpose3d(&mut self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.var(tape, &format!("{prefix}.weight"))?;
        tape.conv_transpose3d(x, w, 2)
    }

    pub fn norm(&mut self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.var(tape, &format!("{prefix}.bn.gamma"))?;
        let beta = self.var(tape, &format!("{prefix}.bn.beta"))?;
        let mean_key = format!("{prefix}.bn.running_mean");
        let var_key = format!("{prefix}.bn.running_var");
        match self.mode {
            NormMode::Train { momentum } => {
                let mut mean = self.params.get(&mean_key)?.clone();
                let mut var = self.params.get(&var_key)?.clone();
                let y = tape.batch_norm(
                    x,
                    gamma,
                    beta,
                    Norm::Train {
                        running_mean: mean.data_mut(),
                        running_var: var.data_mut(),
                        momentum: T::of(momentum),
                    },
                )?;
                self.params.insert(mean_key, mean);
                self.params.insert(var_key, var);
                Ok(y)
            }
            NormMode::Batch => tape.batch_norm(x, gamma, beta, Norm::Batch),
            NormMode::Eval => {
                let mean = self.params.get(&mean_key)?;
                let var = self.params.get(&var_key)?;
                tape.batch_norm(
                    x,
                    gamma,
                    beta,
                    Norm::Eval {
                        running_mean: mean.data(),
                        running_var: var.data(),
                    },
                )
            }
            NormMode::Frozen => tape.batch_norm(x, gamma, beta, Norm::Frozen),
        }
    }

    /// Convolution (no bias), normalization, ReLU.
    pub fn conv_bn_relu(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        prefix: &str,
        stride: usize,
        three_d: bool,
    ) -> Result<Var> {
        let y = if three_d {
            self.conv3d(tape, x, prefix, stride, false)?
        } else {
            self.conv2d(tape, x, prefix, stride, false)?
        };
        let y = self.norm(tape, y, prefix)?;
        Ok(tape.relu(y))
    }
}

/// Weight `[cout, cin, k..]` with fan-in scaled uniform values, plus a zero
/// bias when requested.
pub(crate) fn init_conv<T: Real>(
    params: &mut Params<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cout: usize,
    cin: usize,
    kernel: &[usize],
    bias: bool,
) {
    let mut shape = vec![cout, cin];
    shape.extend_from_slice(kernel);
    let fan_in = cin * kernel.iter().product::<usize>();
    params.init_weight(rng, format!("{prefix}.weight"), &shape, fan_in);
    if bias {
        params.init_const(format!("{prefix}.bias"), &[cout], 0.0);
    }
}

/// Stride-2 transposed 3D convolution weight `[cin, cout, k, k, k]`.
pub(crate) fn init_conv_transpose<T: Real>(
    params: &mut Params<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
) {
    // each output voxel receives about k^3 / 8 taps per input channel
    let fan_in = (cin * k * k * k).div_ceil(8);
    params.init_weight(
        rng,
        format!("{prefix}.weight"),
        &[cin, cout, k, k, k],
        fan_in,
    );
}

pub(crate) fn init_norm<T: Real>(params: &mut Params<T>, prefix: &str, channels: usize) {
    params.init_const(format!("{prefix}.bn.gamma"), &[channels], 1.0);
    params.init_const(format!("{prefix}.bn.beta"), &[channels], 0.0);
    params.init_const(format!("{prefix}.bn.running_mean"), &[channels], 0.0);
    params.init_const(format!("{prefix}.bn.running_var"), &[channels], 1.0);
}
