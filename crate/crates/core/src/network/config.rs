use crate::error::{Error, Result};

/// 2D feature tower shared by all views.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Output channels per layer; the last entry is the feature width F.
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Replace the tower with one 7x7 stride-4 layer producing F channels.
    pub single_layer_baseline: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 8, 16, 16, 16, 32, 32, 32],
            strides: vec![1, 1, 2, 1, 1, 2, 1, 1],
            single_layer_baseline: false,
        }
    }
}

impl FeatureConfig {
    pub fn reduced() -> Self {
        Self {
            channels: vec![4, 4, 8, 8, 8, 8, 8, 8],
            ..Self::default()
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// `(out channels, kernel, stride)` of every layer.
    pub fn layers(&self) -> Vec<(usize, usize, usize)> {
        if self.single_layer_baseline {
            vec![(self.out_channels(), 7, 4)]
        } else {
            self.channels
                .iter()
                .zip(&self.strides)
                .map(|(&c, &s)| (c, if s == 1 { 3 } else { 5 }, s))
                .collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::InvalidArgument(
                "feature channels and strides must be non-empty and equally long".into(),
            ));
        }
        if self.channels.contains(&0) || self.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::InvalidArgument(
                "feature channels must be positive and strides 1 or 2".into(),
            ));
        }
        if self.strides.iter().product::<usize>() != 4 {
            return Err(Error::InvalidArgument(
                "feature strides must downsample by exactly 4".into(),
            ));
        }
        Ok(())
    }
}

/// 3D encoder-decoder over the cost volume.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub scales: usize,
    /// Channels at the finest scale; doubled at every coarser scale.
    pub base_channels: usize,
    pub layers_per_scale: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            base_channels: 8,
            layers_per_scale: 2,
        }
    }
}

impl RegularizerConfig {
    pub fn reduced() -> Self {
        Self {
            base_channels: 4,
            ..Self::default()
        }
    }

    pub fn channels(&self, scale: usize) -> usize {
        self.base_channels << scale
    }

    /// Volume extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0
            || self.scales > 6
            || self.base_channels == 0
            || self.layers_per_scale == 0
        {
            return Err(Error::InvalidArgument(
                "regularizer needs 1..=6 scales, positive channels and layers".into(),
            ));
        }
        Ok(())
    }
}

/// Residual refinement network on the quarter-resolution depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerConfig {
    pub channels: usize,
    pub layers: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            layers: 3,
        }
    }
}

impl RefinerConfig {
    pub fn reduced() -> Self {
        Self {
            channels: 8,
            layers: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostMetric {
    Variance,
    Mean,
}

/// Normalization used while training; inference uses the running
/// statistics for `Batch` and the plain affine map for `Frozen`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Frozen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub features: FeatureConfig,
    pub regularizer: RegularizerConfig,
    pub refiner: RefinerConfig,
    pub cost_metric: CostMetric,
    pub refinement: bool,
    pub norm: NormKind,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            regularizer: RegularizerConfig::default(),
            refiner: RefinerConfig::default(),
            cost_metric: CostMetric::Variance,
            refinement: true,
            norm: NormKind::Batch,
        }
    }
}

impl NetworkConfig {
    /// Small channel schedule for desk-scale experiments.
    pub fn reduced() -> Self {
        Self {
            features: FeatureConfig::reduced(),
            regularizer: RegularizerConfig::reduced(),
            refiner: RefinerConfig::reduced(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.regularizer.validate()?;
        if self.refiner.channels == 0 || self.refiner.layers == 0 {
            return Err(Error::InvalidArgument(
                "refiner needs positive channels and layers".into(),
            ));
        }
        Ok(())
    }

    /// Required divisor of input image height and width.
    pub fn image_divisor(&self) -> usize {
        4 * self.regularizer.divisor()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Views per training sample, reference included.
    pub views: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            views: 3,
            iterations: 1000,
            learning_rate: 1e-3,
            seed: 0,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views < 2 {
            return Err(Error::InvalidArgument(
                "training needs at least 2 views per sample".into(),
            ));
        }
        if !(self.lambda >= 0.0)
            || !(self.learning_rate > 0.0)
            || !(0.0..=1.0).contains(&self.bn_momentum)
        {
            return Err(Error::InvalidArgument(
                "need lambda >= 0, learning_rate > 0 and bn_momentum in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}
