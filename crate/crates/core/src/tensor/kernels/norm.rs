//! Per-channel batch normalization over all non-channel axes.

use crate::tensor::Real;

pub const BN_EPS: f64 = 1e-5;

/// Normalized activations and per-channel inverse standard deviations,
/// kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch statistics `(mean, biased variance)` per channel.
pub fn channel_stats<T: Real>(x: &[T], channels: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len() / channels;
    let nf = T::of(n as f64);
    let mut means = Vec::with_capacity(channels);
    let mut vars = Vec::with_capacity(channels);
    for c in 0..channels {
        let s = &x[c * n..(c + 1) * n];
        let mean = s.iter().fold(T::zero(), |a, &b| a + b) / nf;
        let var = s
            .iter()
            .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
            / nf;
        means.push(mean);
        vars.push(var);
    }
    (means, vars)
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` with the supplied statistics.
pub fn normalize<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
) -> (Vec<T>, BnCache<T>) {
    let channels = gamma.len();
    let n = x.len() / channels;
    let eps = T::of(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for c in 0..channels {
        for i in c * n..(c + 1) * n {
            let h = (x[i] - mean[c]) * inv_std[c];
            xhat[i] = h;
            y[i] = gamma[c] * h + beta[c];
        }
    }
    (y, BnCache { xhat, inv_std })
}

/// Backward pass when the statistics came from the batch itself.
pub fn backward_batch<T: Real>(
    g: &[T],
    gamma: &[T],
    cache: &BnCache<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let channels = gamma.len();
    let n = g.len() / channels;
    let nf = T::of(n as f64);
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        let r = c * n..(c + 1) * n;
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for i in r.clone() {
            sum_g += g[i];
            sum_gx += g[i] * cache.xhat[i];
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let scale = gamma[c] * cache.inv_std[c] / nf;
        for i in r {
            dx[i] = scale * (nf * g[i] - sum_g - cache.xhat[i] * sum_gx);
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward pass when the statistics were constants (running statistics).
pub fn backward_fixed<T: Real>(
    g: &[T],
    gamma: &[T],
    cache: &BnCache<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let channels = gamma.len();
    let n = g.len() / channels;
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        for i in c * n..(c + 1) * n {
            dx[i] = g[i] * gamma[c] * cache.inv_std[c];
            dgamma[c] += g[i] * cache.xhat[i];
            dbeta[c] += g[i];
        }
    }
    (dx, dgamma, dbeta)
}

/// Exponential moving average of running statistics; the variance is
/// stored unbiased when more than one element contributes.
pub fn update_running<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    mean: &[T],
    var: &[T],
    count: usize,
    momentum: T,
) {
    let correction = if count > 1 {
        T::of(count as f64 / (count - 1) as f64)
    } else {
        T::one()
    };
    for c in 0..running_mean.len() {
        running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * mean[c];
        running_var[c] = (T::one() - momentum) * running_var[c] + momentum * var[c] * correction;
    }
}
