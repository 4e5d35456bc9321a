use super::FilterConfig;
use crate::error::{Error, Result};
use crate::geometry::DepthHypotheses;
use crate::scene::{DepthMap, ScalarMap};
use crate::tensor::{Real, Tensor};

/// Probability mass of the four hypotheses around each estimate: indices
/// `k-1..=k+2` with `k = floor((d - d_min) / interval)`, clamped to the
/// volume. Pixels without a valid estimate get 0.
pub fn confidence_map<T: Real>(
    prob: &Tensor<T>,
    hyp: &DepthHypotheses,
    estimate: &DepthMap,
) -> Result<ScalarMap> {
    let s = prob.shape();
    if s.len() != 3 || s[0] != hyp.count || s[1] != estimate.height || s[2] != estimate.width {
        return Err(Error::Shape(format!(
            "probability volume {s:?} does not match {} hypotheses over a {}x{} map",
            hyp.count, estimate.width, estimate.height
        )));
    }
    let d = hyp.count as i64;
    let plane = estimate.width * estimate.height;
    let p = prob.data();
    let values = (0..plane)
        .map(|i| {
            if !estimate.is_valid(i) {
                return 0.0;
            }
            let k = ((estimate.values[i] - hyp.d_min) / hyp.interval).floor() as i64;
            let lo = (k - 1).clamp(0, d - 1);
            let hi = (k + 2).clamp(0, d - 1);
            (lo..=hi).map(|j| p[j as usize * plane + i].as_f64()).sum()
        })
        .collect();
    ScalarMap::new(estimate.width, estimate.height, values)
}

/// Zeroes pixels whose confidence is strictly below the threshold.
pub fn photometric_filter(
    depth: &DepthMap,
    confidence: &ScalarMap,
    cfg: &FilterConfig,
) -> Result<DepthMap> {
    if (depth.width, depth.height) != (confidence.width, confidence.height) {
        return Err(Error::Shape(
            "depth and confidence maps differ in size".into(),
        ));
    }
    let values = depth
        .values
        .iter()
        .zip(&confidence.values)
        .map(|(&d, &c)| if c < cfg.prob_threshold { 0.0 } else { d })
        .collect();
    DepthMap::new(depth.width, depth.height, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(count: usize) -> DepthHypotheses {
        DepthHypotheses::new(10.0, 1.0, count).unwrap()
    }

    #[test]
    fn one_hot_volume_has_full_confidence() {
        let h = hyp(8);
        let mut p = Tensor::<f64>::zeros(&[8, 1, 1]);
        p.data_mut()[5] = 1.0;
        let est = ScalarMap::filled(1, 1, 15.0);
        assert_eq!(confidence_map(&p, &h, &est).unwrap().values, vec![1.0]);
    }

    #[test]
    fn uniform_volume_gives_four_over_d() {
        let h = hyp(256);
        let p = Tensor::<f64>::full(&[256, 2, 2], 1.0 / 256.0);
        let est = ScalarMap::filled(2, 2, 100.3);
        for v in confidence_map(&p, &h, &est).unwrap().values {
            assert!((v - 0.015625).abs() < 1e-15);
        }
    }

    #[test]
    fn window_clamps_at_range_edges() {
        let h = hyp(8);
        let p = Tensor::<f64>::from_fn(&[8, 1, 1], |i| (i + 1) as f64);
        // k = 0: indices 0..=2
        let c = confidence_map(&p, &h, &ScalarMap::filled(1, 1, 10.0)).unwrap();
        assert_eq!(c.values, vec![1.0 + 2.0 + 3.0]);
        // k = 7: indices 6..=7
        let c = confidence_map(&p, &h, &ScalarMap::filled(1, 1, 17.0)).unwrap();
        assert_eq!(c.values, vec![7.0 + 8.0]);
    }

    #[test]
    fn threshold_is_strict() {
        let cfg = FilterConfig::default();
        let d = ScalarMap::filled(2, 1, 5.0);
        let keep =
            photometric_filter(&d, &ScalarMap::new(2, 1, vec![0.8, 1.0]).unwrap(), &cfg).unwrap();
        assert_eq!(keep.values, vec![5.0, 5.0]);
        let drop = photometric_filter(&d, &ScalarMap::filled(2, 1, 0.79), &cfg).unwrap();
        assert_eq!(drop.values, vec![0.0, 0.0]);
    }
}
