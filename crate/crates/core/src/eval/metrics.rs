use std::fmt::Write as _;

use nalgebra::Vector3;

use super::nn::NeighborGrid;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Per-point distances are clamped to this before averaging.
    pub cap: f64,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cap: 20.0,
            thresholds: vec![1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mean_accuracy: f64,
    pub mean_completeness: f64,
    pub overall: f64,
    pub thresholds: Vec<ThresholdMetrics>,
    pub recon_points: usize,
    pub gt_points: usize,
    pub cap: f64,
}

fn nonempty(cloud: &[Vector3<f64>], what: &str) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::Empty(format!("{what} cloud is empty")));
    }
    Ok(())
}

/// Distance from every `query` point to its nearest neighbor in `cloud`.
fn distances(query: &[Vector3<f64>], cloud: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let grid = NeighborGrid::new(cloud)?;
    Ok(exec::map_indices(query.len(), |i| {
        grid.nearest(&query[i]).1
    }))
}

fn capped_mean(d: &[f64], cap: f64) -> f64 {
    d.iter().map(|v| v.min(cap)).sum::<f64>() / d.len() as f64
}

fn percent_within(d: &[f64], threshold: f64) -> f64 {
    100.0 * d.iter().filter(|&&v| v <= threshold).count() as f64 / d.len() as f64
}

fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_cap(cap: f64) -> Result<()> {
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance cap must be positive, got {cap}"
        )));
    }
    Ok(())
}

/// Mean over reconstructed points of the capped distance to the ground truth.
pub fn accuracy_distance(recon: &[Vector3<f64>], gt: &[Vector3<f64>], cap: f64) -> Result<f64> {
    nonempty(recon, "reconstructed")?;
    nonempty(gt, "ground-truth")?;
    check_cap(cap)?;
    Ok(capped_mean(&distances(recon, gt)?, cap))
}

/// Mean over ground-truth points of the capped distance to the reconstruction.
pub fn completeness_distance(recon: &[Vector3<f64>], gt: &[Vector3<f64>], cap: f64) -> Result<f64> {
    nonempty(recon, "reconstructed")?;
    nonempty(gt, "ground-truth")?;
    check_cap(cap)?;
    Ok(capped_mean(&distances(gt, recon)?, cap))
}

/// `(precision, recall, f_score)` in percent; a point counts when its
/// nearest neighbor is at most `threshold` away.
pub fn percentage_metrics(
    recon: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    threshold: f64,
) -> Result<(f64, f64, f64)> {
    nonempty(recon, "reconstructed")?;
    nonempty(gt, "ground-truth")?;
    let p = percent_within(&distances(recon, gt)?, threshold);
    let r = percent_within(&distances(gt, recon)?, threshold);
    Ok((p, r, f_score(p, r)))
}

pub fn evaluate(
    recon: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    nonempty(recon, "reconstructed")?;
    nonempty(gt, "ground-truth")?;
    check_cap(cfg.cap)?;
    let to_gt = distances(recon, gt)?;
    let to_recon = distances(gt, recon)?;
    let mean_accuracy = capped_mean(&to_gt, cfg.cap);
    let mean_completeness = capped_mean(&to_recon, cfg.cap);
    let thresholds = cfg
        .thresholds
        .iter()
        .map(|&t| {
            let precision = percent_within(&to_gt, t);
            let recall = percent_within(&to_recon, t);
            ThresholdMetrics {
                threshold: t,
                precision,
                recall,
                f_score: f_score(precision, recall),
            }
        })
        .collect();
    Ok(MetricReport {
        mean_accuracy,
        mean_completeness,
        overall: (mean_accuracy + mean_completeness) / 2.0,
        thresholds,
        recon_points: recon.len(),
        gt_points: gt.len(),
        cap: cfg.cap,
    })
}

impl MetricReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "points      recon {:>10}   gt {:>10}",
            self.recon_points, self.gt_points
        );
        let _ = writeln!(s, "accuracy    {:>12.6}", self.mean_accuracy);
        let _ = writeln!(s, "completeness{:>12.6}", self.mean_completeness);
        let _ = writeln!(s, "overall     {:>12.6}   (cap {})", self.overall, self.cap);
        let _ = writeln!(
            s,
            "{:>10} {:>10} {:>10} {:>10}",
            "threshold", "precision", "recall", "f-score"
        );
        for t in &self.thresholds {
            let _ = writeln!(
                s,
                "{:>10} {:>10.3} {:>10.3} {:>10.3}",
                t.threshold, t.precision, t.recall, t.f_score
            );
        }
        s
    }

    /// One `key=value` per line, full precision.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "recon_points={}", self.recon_points);
        let _ = writeln!(s, "gt_points={}", self.gt_points);
        let _ = writeln!(s, "cap={:?}", self.cap);
        let _ = writeln!(s, "mean_accuracy={:?}", self.mean_accuracy);
        let _ = writeln!(s, "mean_completeness={:?}", self.mean_completeness);
        let _ = writeln!(s, "overall={:?}", self.overall);
        for t in &self.thresholds {
            let _ = writeln!(s, "precision@{:?}={:?}", t.threshold, t.precision);
            let _ = writeln!(s, "recall@{:?}={:?}", t.threshold, t.recall);
            let _ = writeln!(s, "f_score@{:?}={:?}", t.threshold, t.f_score);
        }
        s
    }
}
