use crate::error::{Error, Result};

/// Uniformly spaced fronto-parallel depth planes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthHypotheses {
    pub d_min: f64,
    pub interval: f64,
    pub count: usize,
}

impl DepthHypotheses {
    pub fn new(d_min: f64, interval: f64, count: usize) -> Result<Self> {
        if !(d_min > 0.0) || !(interval > 0.0) || count == 0 {
            return Err(Error::InvalidArgument(format!(
                "depth hypotheses need d_min > 0, interval > 0, count > 0 (got {d_min}, {interval}, {count})"
            )));
        }
        Ok(Self {
            d_min,
            interval,
            count,
        })
    }

    /// `count` planes spanning `[d_min, d_max]` inclusive.
    pub fn spanning(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArgument(
                "spanning needs at least two planes".into(),
            ));
        }
        Self::new(d_min, (d_max - d_min) / (count - 1) as f64, count)
    }

    pub fn d_max(&self) -> f64 {
        self.depth(self.count - 1)
    }

    pub fn depth(&self, k: usize) -> f64 {
        self.d_min + k as f64 * self.interval
    }

    pub fn samples(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.depth(k)).collect()
    }
}
