//! Toy GPT2-style decoder whose alternate FFN blocks are top-1 routed
//! mixture-of-experts layers, plus closed-form parameter and FLOPs counts.

mod config;
mod cost;
mod forward;
mod init;
mod weights;

pub use config::{
    alternate_layers, ModelConfig, DEFAULT_ALPHA, DEFAULT_EVAL_CAPACITY_FACTOR,
    DEFAULT_MIN_EXPERT_CAPACITY, DEFAULT_TRAIN_CAPACITY_FACTOR,
};
pub use cost::{
    ffn_flops_per_layer, ffn_params, flops_per_token, param_count, FlopsBreakdown,
    ParamBreakdown,
};
pub use forward::{
    argmax, evaluate_nll, expert_capacity, gate_values, load_balance_loss, model_forward,
    moe_layer_forward, softmax, token_nll, ForwardStats, Mode, MoeLayerStats,
};
#[cfg(test)]
pub(crate) use init::random_expert;
pub use init::{init_planted, init_planted_with, init_random, Planted, PlantedOptions, INIT_STD};
pub use weights::{
    gelu, Attention, Block, ExpertWeights, FeedForward, LayerNorm, Linear, MoeLayer,
    RouterWeights, SmoeCheckpoint,
};
