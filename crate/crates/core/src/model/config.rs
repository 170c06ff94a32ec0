use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_TRAIN_CAPACITY_FACTOR: f64 = 1.2;
pub const DEFAULT_EVAL_CAPACITY_FACTOR: f64 = 1.0;
pub const DEFAULT_MIN_EXPERT_CAPACITY: usize = 4;

/// Architecture hyper-parameters of a decoder whose feed-forward blocks may
/// be mixture-of-experts layers.
///
/// JSON documents may omit `d_ff` (defaults to `4 * d_model`),
/// `moe_layer_indices` (every other layer starting at 0), `top_k` (1) and
/// the routing constants (`alpha` 0.01, train/eval capacity factor 1.2/1.0,
/// minimum expert capacity 4). `expert_counts` is an optional per-MoE-layer
/// override of `n_experts`, written by reductions that leave layers with
/// different expert counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub vocab_size: usize,
    pub context_length: usize,
    pub moe_layer_indices: Vec<usize>,
    pub alpha: f64,
    pub train_capacity_factor: f64,
    pub eval_capacity_factor: f64,
    pub min_expert_capacity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_counts: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    d_model: usize,
    d_ff: Option<usize>,
    n_heads: usize,
    n_layers: usize,
    n_experts: usize,
    top_k: Option<usize>,
    vocab_size: usize,
    context_length: usize,
    moe_layer_indices: Option<Vec<usize>>,
    alpha: Option<f64>,
    train_capacity_factor: Option<f64>,
    eval_capacity_factor: Option<f64>,
    min_expert_capacity: Option<usize>,
    expert_counts: Option<Vec<usize>>,
}

impl TryFrom<RawConfig> for ModelConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        let cfg = ModelConfig {
            d_model: raw.d_model,
            d_ff: raw.d_ff.unwrap_or(4 * raw.d_model),
            n_heads: raw.n_heads,
            n_layers: raw.n_layers,
            n_experts: raw.n_experts,
            top_k: raw.top_k.unwrap_or(1),
            vocab_size: raw.vocab_size,
            context_length: raw.context_length,
            moe_layer_indices: raw
                .moe_layer_indices
                .unwrap_or_else(|| alternate_layers(raw.n_layers)),
            alpha: raw.alpha.unwrap_or(DEFAULT_ALPHA),
            train_capacity_factor: raw
                .train_capacity_factor
                .unwrap_or(DEFAULT_TRAIN_CAPACITY_FACTOR),
            eval_capacity_factor: raw
                .eval_capacity_factor
                .unwrap_or(DEFAULT_EVAL_CAPACITY_FACTOR),
            min_expert_capacity: raw.min_expert_capacity.unwrap_or(DEFAULT_MIN_EXPERT_CAPACITY),
            expert_counts: raw.expert_counts,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Layers `0, 2, 4, ...`: MoE replaces every other FFN starting with the first.
pub fn alternate_layers(n_layers: usize) -> Vec<usize> {
    (0..n_layers).step_by(2).collect()
}

impl ModelConfig {
    /// Config with the default routing constants, `d_ff = 4 * d_model` and
    /// alternate-layer MoE placement.
    pub fn new(
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
        n_experts: usize,
        vocab_size: usize,
        context_length: usize,
    ) -> Self {
        Self {
            d_model,
            d_ff: 4 * d_model,
            n_heads,
            n_layers,
            n_experts,
            top_k: 1,
            vocab_size,
            context_length,
            moe_layer_indices: alternate_layers(n_layers),
            alpha: DEFAULT_ALPHA,
            train_capacity_factor: DEFAULT_TRAIN_CAPACITY_FACTOR,
            eval_capacity_factor: DEFAULT_EVAL_CAPACITY_FACTOR,
            min_expert_capacity: DEFAULT_MIN_EXPERT_CAPACITY,
            expert_counts: None,
        }
    }

    /// The 24-layer, 1024-wide GPT2-medium backbone (16 heads, d_ff 4096,
    /// GPT2 BPE vocabulary of 50257, 1024 positions) with `n_experts` per
    /// MoE layer.
    pub fn gpt2_medium(n_experts: usize) -> Self {
        Self::new(1024, 16, 24, n_experts, 50257, 1024)
    }

    /// The 12-layer variant of the same width.
    pub fn gpt2_small_wide(n_experts: usize) -> Self {
        Self::new(1024, 12, 12, n_experts, 50257, 1024)
    }

    pub fn with_d_ff(mut self, d_ff: usize) -> Self {
        self.d_ff = d_ff;
        self
    }

    pub fn with_moe_layers(mut self, layers: Vec<usize>) -> Self {
        self.moe_layer_indices = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(format!("invalid model config: {m}")));
        if self.d_model == 0 || self.d_ff == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return fail("dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_experts == 0 {
            return fail("n_experts must be at least 1".into());
        }
        if self.top_k != 1 {
            return fail(format!("only top_k = 1 routing is supported, got {}", self.top_k));
        }
        if self.vocab_size == 0 || self.context_length == 0 {
            return fail("vocab_size and context_length must be positive".into());
        }
        if self.moe_layer_indices.windows(2).any(|w| w[0] >= w[1]) {
            return fail("moe_layer_indices must be strictly increasing".into());
        }
        if let Some(&l) = self.moe_layer_indices.iter().find(|&&l| l >= self.n_layers) {
            return fail(format!("MoE layer {l} out of range for {} layers", self.n_layers));
        }
        for (name, cf) in [
            ("train_capacity_factor", self.train_capacity_factor),
            ("eval_capacity_factor", self.eval_capacity_factor),
        ] {
            if !(cf.is_finite() && cf > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return fail("alpha must be non-negative".into());
        }
        if let Some(counts) = &self.expert_counts {
            if counts.len() != self.moe_layer_indices.len() {
                return fail(format!(
                    "expert_counts has {} entries for {} MoE layers",
                    counts.len(),
                    self.moe_layer_indices.len()
                ));
            }
            if counts.contains(&0) {
                return fail("expert_counts entries must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn is_moe_layer(&self, layer: usize) -> bool {
        self.moe_layer_indices.binary_search(&layer).is_ok()
    }

    pub fn n_moe_layers(&self) -> usize {
        self.moe_layer_indices.len()
    }

    /// Expert count of an MoE layer (0 for dense layers).
    pub fn experts_in_layer(&self, layer: usize) -> usize {
        match self.moe_layer_indices.binary_search(&layer) {
            Ok(pos) => self
                .expert_counts
                .as_ref()
                .map_or(self.n_experts, |c| c[pos]),
            Err(_) => 0,
        }
    }

    /// `(layer id, expert count)` for every MoE layer.
    pub fn moe_layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.moe_layer_indices
            .iter()
            .map(|&l| (l, self.experts_in_layer(l)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
