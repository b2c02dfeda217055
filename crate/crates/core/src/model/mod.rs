//! A toy pre-norm residual stack with the seven linear roles of a transformer
//! block, fused-rotation rewriting and the rotate → calibrate → quantize
//! pipeline.

mod network;
mod pipeline;
mod spec;

pub use network::{
    apply_fused_rotations, build_toy_model, max_relative_deviation, BlockInputs, ForwardPass, ToyModel,
    INPUT_GROUPS, RMS_EPS,
};
pub use pipeline::{calibrated_records, holdout_kl_proxy, quantize_model, PipelineConfig, QuantizedModel};
pub use spec::{ToyModelSpec, WeightDistribution};
