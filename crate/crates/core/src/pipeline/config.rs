//! Line-oriented `key = value` configuration of the whole pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::ViewSelectionParams;
use crate::network::{
    CostMetric, FeatureConfig, NetworkConfig, NormKind, RefinerConfig, RegularizerConfig,
    TrainConfig,
};
use crate::postprocess::FilterConfig;
use crate::scene::{GroundPlane, SceneSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Empty means `<output_dir>/model.bin`.
    pub checkpoint: PathBuf,
    /// Empty means `<output_dir>/fused.ply`.
    pub recon_ply: PathBuf,
    /// Empty means the scene's ground truth, written to `<output_dir>/gt.ply`.
    pub gt_ply: PathBuf,

    pub width: usize,
    pub height: usize,
    pub scene_views: usize,
    pub spheres: usize,
    pub textureless_patch: bool,
    pub depth_count: usize,
    pub d_min: Option<f64>,
    pub interval: Option<f64>,

    pub views: usize,
    pub theta0: f64,
    pub sigma1: f64,
    pub sigma2: f64,

    pub feature_channels: Vec<usize>,
    pub feature_strides: Vec<usize>,
    pub single_layer_features: bool,
    pub regularizer_scales: usize,
    pub regularizer_channels: usize,
    pub regularizer_layers: usize,
    pub refiner_channels: usize,
    pub refiner_layers: usize,
    pub cost_metric: CostMetric,
    pub refinement: bool,
    pub norm: NormKind,

    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub bn_momentum: f64,

    pub prob_threshold: f64,
    pub pixel_threshold: f64,
    pub rel_depth_threshold: f64,
    pub min_consistent_views: usize,
    pub count_reference: bool,

    pub distance_cap: f64,
    pub thresholds: Vec<f64>,
    pub gt_stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainConfig::default();
        let sel = ViewSelectionParams::default();
        let filter = FilterConfig::default();
        let eval = EvalConfig::default();
        Self {
            seed: 0,
            scene_dir: "scene".into(),
            output_dir: "output".into(),
            checkpoint: PathBuf::new(),
            recon_ply: PathBuf::new(),
            gt_ply: PathBuf::new(),
            width: 128,
            height: 96,
            scene_views: 5,
            spheres: 2,
            textureless_patch: false,
            depth_count: 48,
            d_min: None,
            interval: None,
            views: train.views,
            theta0: sel.theta0,
            sigma1: sel.sigma1,
            sigma2: sel.sigma2,
            feature_channels: net.features.channels,
            feature_strides: net.features.strides,
            single_layer_features: net.features.single_layer_baseline,
            regularizer_scales: net.regularizer.scales,
            regularizer_channels: net.regularizer.base_channels,
            regularizer_layers: net.regularizer.layers_per_scale,
            refiner_channels: net.refiner.channels,
            refiner_layers: net.refiner.layers,
            cost_metric: net.cost_metric,
            refinement: net.refinement,
            norm: net.norm,
            iterations: 200,
            learning_rate: train.learning_rate,
            lambda: train.lambda,
            bn_momentum: train.bn_momentum,
            prob_threshold: filter.prob_threshold,
            pixel_threshold: filter.pixel_threshold,
            rel_depth_threshold: filter.rel_depth_threshold,
            min_consistent_views: filter.min_consistent_views,
            count_reference: filter.count_reference,
            distance_cap: eval.cap,
            thresholds: eval.thresholds,
            gt_stride: 2,
        }
    }
}

/// Short aliases accepted on input; output always uses the long names.
pub fn canonical_key(key: &str) -> &str {
    match key {
        "W" => "width",
        "H" => "height",
        "D" => "depth_count",
        "N" => "views",
        other => other,
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn invalid(key: &str, value: &str, expected: &str) -> Error {
    Error::InvalidArgument(format!("{key}: cannot parse '{value}' as {expected}"))
}

fn scalar<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(key, value, expected))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, value, "a boolean")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| invalid(key, value, expected)))
        .collect()
}

fn optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        scalar(key, value, "a number or 'auto'").map(Some)
    }
}

impl PipelineConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Path| p.display().to_string();
        vec![
            ("seed", self.seed.to_string()),
            ("scene_dir", path(&self.scene_dir)),
            ("output_dir", path(&self.output_dir)),
            ("checkpoint", path(&self.checkpoint)),
            ("recon_ply", path(&self.recon_ply)),
            ("gt_ply", path(&self.gt_ply)),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("scene_views", self.scene_views.to_string()),
            ("spheres", self.spheres.to_string()),
            ("textureless_patch", self.textureless_patch.to_string()),
            ("depth_count", self.depth_count.to_string()),
            ("d_min", opt(self.d_min)),
            ("interval", opt(self.interval)),
            ("views", self.views.to_string()),
            ("theta0", self.theta0.to_string()),
            ("sigma1", self.sigma1.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("feature_channels", list(&self.feature_channels)),
            ("feature_strides", list(&self.feature_strides)),
            (
                "single_layer_features",
                self.single_layer_features.to_string(),
            ),
            ("regularizer_scales", self.regularizer_scales.to_string()),
            (
                "regularizer_channels",
                self.regularizer_channels.to_string(),
            ),
            ("regularizer_layers", self.regularizer_layers.to_string()),
            ("refiner_channels", self.refiner_channels.to_string()),
            ("refiner_layers", self.refiner_layers.to_string()),
            (
                "cost_metric",
                match self.cost_metric {
                    CostMetric::Variance => "variance",
                    CostMetric::Mean => "mean",
                }
                .into(),
            ),
            ("refinement", self.refinement.to_string()),
            (
                "norm",
                match self.norm {
                    NormKind::Batch => "batch",
                    NormKind::Frozen => "frozen",
                }
                .into(),
            ),
            ("iterations", self.iterations.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("lambda", self.lambda.to_string()),
            ("bn_momentum", self.bn_momentum.to_string()),
            ("prob_threshold", self.prob_threshold.to_string()),
            ("pixel_threshold", self.pixel_threshold.to_string()),
            ("rel_depth_threshold", self.rel_depth_threshold.to_string()),
            (
                "min_consistent_views",
                self.min_consistent_views.to_string(),
            ),
            ("count_reference", self.count_reference.to_string()),
            ("distance_cap", self.distance_cap.to_string()),
            ("thresholds", list(&self.thresholds)),
            ("gt_stride", self.gt_stride.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default()
            .entries()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    /// Sets one key from its text form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match canonical_key(key) {
            "seed" => self.seed = scalar(key, v, "an unsigned integer")?,
            "scene_dir" => self.scene_dir = v.into(),
            "output_dir" => self.output_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "recon_ply" => self.recon_ply = v.into(),
            "gt_ply" => self.gt_ply = v.into(),
            "width" => self.width = scalar(key, v, "an unsigned integer")?,
            "height" => self.height = scalar(key, v, "an unsigned integer")?,
            "scene_views" => self.scene_views = scalar(key, v, "an unsigned integer")?,
            "spheres" => self.spheres = scalar(key, v, "an unsigned integer")?,
            "textureless_patch" => self.textureless_patch = boolean(key, v)?,
            "depth_count" => self.depth_count = scalar(key, v, "an unsigned integer")?,
            "d_min" => self.d_min = optional(key, v)?,
            "interval" => self.interval = optional(key, v)?,
            "views" => self.views = scalar(key, v, "an unsigned integer")?,
            "theta0" => self.theta0 = scalar(key, v, "a number")?,
            "sigma1" => self.sigma1 = scalar(key, v, "a number")?,
            "sigma2" => self.sigma2 = scalar(key, v, "a number")?,
            "feature_channels" => self.feature_channels = parse_list(key, v, "a list of integers")?,
            "feature_strides" => self.feature_strides = parse_list(key, v, "a list of integers")?,
            "single_layer_features" => self.single_layer_features = boolean(key, v)?,
            "regularizer_scales" => {
                self.regularizer_scales = scalar(key, v, "an unsigned integer")?
            }
            "regularizer_channels" => {
                self.regularizer_channels = scalar(key, v, "an unsigned integer")?
            }
            "regularizer_layers" => {
                self.regularizer_layers = scalar(key, v, "an unsigned integer")?
            }
            "refiner_channels" => self.refiner_channels = scalar(key, v, "an unsigned integer")?,
            "refiner_layers" => self.refiner_layers = scalar(key, v, "an unsigned integer")?,
            "cost_metric" => {
                self.cost_metric = match v {
                    "variance" => CostMetric::Variance,
                    "mean" => CostMetric::Mean,
                    _ => return Err(invalid(key, v, "'variance' or 'mean'")),
                }
            }
            "refinement" => self.refinement = boolean(key, v)?,
            "norm" => {
                self.norm = match v {
                    "batch" => NormKind::Batch,
                    "frozen" => NormKind::Frozen,
                    _ => return Err(invalid(key, v, "'batch' or 'frozen'")),
                }
            }
            "iterations" => self.iterations = scalar(key, v, "an unsigned integer")?,
            "learning_rate" => self.learning_rate = scalar(key, v, "a number")?,
            "lambda" => self.lambda = scalar(key, v, "a number")?,
            "bn_momentum" => self.bn_momentum = scalar(key, v, "a number")?,
            "prob_threshold" => self.prob_threshold = scalar(key, v, "a number")?,
            "pixel_threshold" => self.pixel_threshold = scalar(key, v, "a number")?,
            "rel_depth_threshold" => self.rel_depth_threshold = scalar(key, v, "a number")?,
            "min_consistent_views" => {
                self.min_consistent_views = scalar(key, v, "an unsigned integer")?
            }
            "count_reference" => self.count_reference = boolean(key, v)?,
            "distance_cap" => self.distance_cap = scalar(key, v, "a number")?,
            "thresholds" => self.thresholds = parse_list(key, v, "a list of numbers")?,
            "gt_stride" => self.gt_stride = scalar(key, v, "an unsigned integer")?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key '{key}'"
                )))
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            if v.is_empty() {
                let _ = writeln!(s, "{k} =");
            } else {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.derived(&self.checkpoint, "model.bin")
    }

    pub fn recon_path(&self) -> PathBuf {
        self.derived(&self.recon_ply, "fused.ply")
    }

    fn derived(&self, explicit: &Path, name: &str) -> PathBuf {
        if explicit.as_os_str().is_empty() {
            self.output_dir.join(name)
        } else {
            explicit.to_path_buf()
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            features: FeatureConfig {
                channels: self.feature_channels.clone(),
                strides: self.feature_strides.clone(),
                single_layer_baseline: self.single_layer_features,
            },
            regularizer: RegularizerConfig {
                scales: self.regularizer_scales,
                base_channels: self.regularizer_channels,
                layers_per_scale: self.regularizer_layers,
            },
            refiner: RefinerConfig {
                channels: self.refiner_channels,
                layers: self.refiner_layers,
            },
            cost_metric: self.cost_metric,
            refinement: self.refinement,
            norm: self.norm,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            views: self.views,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            seed: self.seed,
            bn_momentum: self.bn_momentum,
        }
    }

    pub fn selection(&self) -> ViewSelectionParams {
        ViewSelectionParams {
            theta0: self.theta0,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            prob_threshold: self.prob_threshold,
            pixel_threshold: self.pixel_threshold,
            rel_depth_threshold: self.rel_depth_threshold,
            min_consistent_views: self.min_consistent_views,
            count_reference: self.count_reference,
        }
    }

    pub fn evaluation(&self) -> EvalConfig {
        EvalConfig {
            cap: self.distance_cap,
            thresholds: self.thresholds.clone(),
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        let mut spec = SceneSpec::toy(
            self.seed,
            self.width,
            self.height,
            self.scene_views,
            self.spheres,
        );
        spec.depth_count = self.depth_count;
        if self.textureless_patch {
            if let Some(GroundPlane { textureless, .. }) = spec.ground.as_mut() {
                *textureless = Some((nalgebra::Vector3::new(-150.0, 120.0, 0.0), 60.0));
            }
        }
        spec
    }

    /// Checks value ranges and cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (key, v) in [("width", self.width), ("height", self.height)] {
            if v == 0 || v % 32 != 0 {
                return bad(format!("{key}: {v} is not a positive multiple of 32"));
            }
        }
        if self.depth_count == 0 || !self.depth_count.is_multiple_of(8) {
            return bad(format!(
                "depth_count: {} is not a positive multiple of 8",
                self.depth_count
            ));
        }
        if self.d_min.is_some() != self.interval.is_some() {
            return bad("d_min and interval must be given together".into());
        }
        if let (Some(d), Some(i)) = (self.d_min, self.interval) {
            if !(d > 0.0 && i > 0.0) {
                return bad("d_min and interval must be positive".into());
            }
        }
        if self.views < 2 {
            return bad(format!("views: need at least 2, got {}", self.views));
        }
        if self.scene_views < self.views {
            return bad(format!(
                "scene_views: {} is fewer than views = {}",
                self.scene_views, self.views
            ));
        }
        if self.gt_stride == 0 {
            return bad("gt_stride must be positive".into());
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return bad("thresholds must be positive".into());
        }
        if !(self.distance_cap > 0.0) {
            return bad("distance_cap must be positive".into());
        }
        self.network().validate()?;
        self.training().validate()?;
        self.selection().validate()?;
        self.filter().validate()?;
        Ok(())
    }
}

/// Parses config text: `key = value` lines, `#` comments, blank lines.
/// Repeated keys are rejected.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: PathBuf::from("<config>"),
            line: n + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
        let key = canonical_key(key.trim());
        if !seen.insert(key.to_string()) {
            return Err(err(format!("key '{key}' given twice")));
        }
        cfg.set(key, value).map_err(|e| err(e.to_string()))?;
    }
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.views, 3);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(
            (c.prob_threshold, c.pixel_threshold, c.rel_depth_threshold),
            (0.8, 1.0, 0.01)
        );
        assert_eq!(c.min_consistent_views, 3);
        assert_eq!((c.theta0, c.sigma1, c.sigma2), (5.0, 1.0, 10.0));
        c.validate().unwrap();
    }

    #[test]
    fn override_and_fixed_point() {
        let c = parse_config("# comment\nlambda = 0.5\nd_min = 425\ninterval = 2\n").unwrap();
        assert_eq!(c.lambda, 0.5);
        let text = c.to_text();
        let again = parse_config(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), text);
    }

    #[test]
    fn indivisible_width_rejected() {
        let c = parse_config("W = 100").unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn unknown_and_repeated_keys_rejected() {
        let err = parse_config("lamda = 1").unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        assert!(parse_config("seed = 1\nseed = 2").is_err());
        assert!(parse_config("views = 3\nN = 4").is_err());
        assert!(parse_config("seed").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let c = PipelineConfig::default();
        let mut d = PipelineConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }
}
