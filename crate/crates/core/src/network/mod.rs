//! The learned depth pipeline and its training loop.

mod config;
mod layers;
mod model;
mod params;
mod train;

pub use config::{
    CostMetric, FeatureConfig, NetworkConfig, NormKind, RefinerConfig, RegularizerConfig,
    TrainConfig,
};
pub use layers::{Binding, NormMode};
pub use model::{
    build_cost_volume, depth_loss, extract_features, forward, guide_image, init_params,
    initial_depth, refine_depth, regularize, standardize, ForwardVars, Inference, LossVars, Model,
    MvsInput, FEATURE_SCALE,
};
pub use params::{is_buffer, Params};
pub use train::{train, training_samples, validation_loss, TrainReport, TrainingSample};
