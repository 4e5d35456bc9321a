//! Adam with bias correction.

use std::collections::BTreeMap;

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every `(name, param, grad)` entry.
    pub fn step<'a, I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut [T], &'a [T])>,
    {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        for (name, param, grad) in entries {
            if param.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    grad.len(),
                    param.len()
                )));
            }
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); param.len()]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); param.len()]);
            if m.len() != param.len() {
                return Err(Error::Shape(format!("moment shape changed for {name}")));
            }
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i].as_f64() / bc1;
                let vhat = v[i].as_f64() / bc2;
                let update = c.learning_rate * mhat / (vhat.sqrt() + c.eps);
                param[i] -= T::of(update);
            }
        }
        Ok(())
    }
}
