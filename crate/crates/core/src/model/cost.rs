use serde::Serialize;

use crate::model::ModelConfig;

/// Exact parameter counts by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    /// Token and position embeddings (the output head is tied).
    pub embedding: u64,
    /// Q, K, V and O projections with biases.
    pub attention: u64,
    /// Two layernorms per block plus the final one.
    pub layernorm: u64,
    /// FFNs of the dense (non-MoE) layers.
    pub dense_ffn: u64,
    /// All experts of all MoE layers.
    pub experts: u64,
    pub routers: u64,
    pub total: u64,
}

/// Parameters of one two-layer FFN with biases.
pub fn ffn_params(cfg: &ModelConfig) -> u64 {
    let (d, f) = (cfg.d_model as u64, cfg.d_ff as u64);
    2 * d * f + f + d
}

pub fn param_count(cfg: &ModelConfig) -> ParamBreakdown {
    let d = cfg.d_model as u64;
    let layers = cfg.n_layers as u64;
    let ffn = ffn_params(cfg);
    let embedding = (cfg.vocab_size as u64 + cfg.context_length as u64) * d;
    let attention = layers * (4 * d * d + 4 * d);
    let layernorm = (2 * layers + 1) * 2 * d;
    let dense_ffn = (layers - cfg.n_moe_layers() as u64) * ffn;
    let (experts, routers) = cfg.moe_layers().fold((0, 0), |(e, r), (_, m)| {
        (e + m as u64 * ffn, r + m as u64 * d)
    });
    ParamBreakdown {
        embedding,
        attention,
        layernorm,
        dense_ffn,
        experts,
        routers,
        total: embedding + attention + layernorm + dense_ffn + experts + routers,
    }
}

/// Forward FLOPs per token by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FlopsBreakdown {
    /// `N_l · 24 d²` for `d_ff = 4d`; in general `6 d d_ff` per layer, with
    /// MoE layers counting only their `top_k` activated experts.
    pub ffn: u64,
    /// `N_l · 48 d²`.
    pub qkvo: u64,
    /// `N_l · 6 d (L + 1)` with `L` the context length.
    pub attention: u64,
    /// `2 d M` per MoE layer; reported but excluded from the total.
    pub router: u64,
    pub total_activated: u64,
}

/// FFN FLOPs per token for one layer running one FFN.
pub fn ffn_flops_per_layer(cfg: &ModelConfig) -> u64 {
    6 * cfg.d_model as u64 * cfg.d_ff as u64
}

pub fn flops_per_token(cfg: &ModelConfig) -> FlopsBreakdown {
    let d = cfg.d_model as u64;
    let layers = cfg.n_layers as u64;
    let moe = cfg.n_moe_layers() as u64;
    let per_ffn = ffn_flops_per_layer(cfg);
    let ffn = (layers - moe) * per_ffn + moe * cfg.top_k as u64 * per_ffn;
    let qkvo = layers * 48 * d * d;
    let attention = layers * 6 * d * (cfg.context_length as u64 + 1);
    let router = cfg.moe_layers().map(|(_, m)| 2 * d * m as u64).sum();
    FlopsBreakdown {
        ffn,
        qkvo,
        attention,
        router,
        total_activated: ffn + qkvo + attention,
    }
}
