use std::collections::BTreeSet;

use nalgebra::Vector3;

use super::Camera;
use crate::error::{Error, Result};

/// A sparse surface point and the views that observe it.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTrack {
    pub position: Vector3<f64>,
    pub views: BTreeSet<usize>,
}

/// Parameters of the piecewise Gaussian over baseline angles, in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSelectionParams {
    pub theta0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for ViewSelectionParams {
    fn default() -> Self {
        Self {
            theta0: 5.0,
            sigma1: 1.0,
            sigma2: 10.0,
        }
    }
}

impl ViewSelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma1 and sigma2 must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian with a narrow left flank (`sigma1`) and a wide right flank
/// (`sigma2`), peaking at `theta0`.
pub fn piecewise_gaussian(theta: f64, p: &ViewSelectionParams) -> f64 {
    let d = theta - p.theta0;
    let sigma = if theta <= p.theta0 {
        p.sigma1
    } else {
        p.sigma2
    };
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Angle in degrees at `point` between the rays to the two camera centers,
/// or `None` if the point coincides with either center.
fn baseline_angle(point: &Vector3<f64>, ci: &Vector3<f64>, cj: &Vector3<f64>) -> Option<f64> {
    let a = (ci - point).try_normalize(1e-12)?;
    let b = (cj - point).try_normalize(1e-12)?;
    Some(a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Sum of the piecewise Gaussian of the baseline angle over tracks seen by
/// both views.
pub fn pair_score(
    tracks: &[SparseTrack],
    cams: &[Camera],
    i: usize,
    j: usize,
    p: &ViewSelectionParams,
) -> f64 {
    let (ci, cj) = (cams[i].center(), cams[j].center());
    tracks
        .iter()
        .filter(|t| t.views.contains(&i) && t.views.contains(&j))
        .filter_map(|t| baseline_angle(&t.position, &ci, &cj))
        .map(|theta| piecewise_gaussian(theta, p))
        .sum()
}

/// The `count` best-scoring views against `reference`, best first; equal
/// scores keep the lower view index first.
pub fn select_source_views(
    reference: usize,
    cams: &[Camera],
    tracks: &[SparseTrack],
    count: usize,
    p: &ViewSelectionParams,
) -> Result<Vec<usize>> {
    if reference >= cams.len() {
        return Err(Error::InvalidArgument(format!(
            "reference view {reference} out of range for {} cameras",
            cams.len()
        )));
    }
    if count + 1 > cams.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {count} source views but only {} other views exist",
            cams.len() - 1
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..cams.len())
        .filter(|&j| j != reference)
        .map(|j| (pair_score(tracks, cams, reference, j, p), j))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(count).map(|(_, j)| j).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_and_flanks() {
        let p = ViewSelectionParams::default();
        assert_eq!(piecewise_gaussian(5.0, &p), 1.0);
        assert!((piecewise_gaussian(4.0, &p) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((piecewise_gaussian(15.0, &p) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((piecewise_gaussian(4.0, &p) - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn continuous_at_peak() {
        let p = ViewSelectionParams::default();
        let left = piecewise_gaussian(5.0 - 1e-9, &p);
        let right = piecewise_gaussian(5.0 + 1e-9, &p);
        assert!((left - 1.0).abs() < 1e-12 && (right - 1.0).abs() < 1e-12);
    }
}
