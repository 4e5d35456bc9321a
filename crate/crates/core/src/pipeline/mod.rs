//! Configuration and on-disk stages of the end-to-end pipeline.

mod config;
mod stages;

pub use config::{canonical_key, parse_config, read_config, PipelineConfig};
pub use stages::{
    eval_stage, filter_stage, fuse_stage, infer_stage, run_pipeline, run_stage, synth, train_stage,
    Failure, Stage,
};
