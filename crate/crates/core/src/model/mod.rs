mod config;
mod cost;
mod io;
mod network;

pub use config::{AttentionConfig, MixerKind, ModelConfig, StageConfig, StemConfig, Variant};
pub use cost::{
    config_cost_report, cost_report, instrumented_flop_count, instrumented_op_count,
    mhla_complexity, mhsa_complexity, published_reference, token_mixer_cost, Cost, CostReport,
    Deviation, Reference, StageCost,
};
pub use network::{ConvBn, ForwardTrace, Head, Init, Model, Stage};
