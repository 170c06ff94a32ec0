use crate::error::{Error, Result};
use crate::model::{Attention, FeedForward, MoeLayer, RouterWeights, SmoeCheckpoint};
use crate::numerics::{dot, Matrix};

/// Which capacity factor MoE layers apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Routing statistics of one MoE layer over one flattened batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MoeLayerStats {
    pub layer: usize,
    /// Pre-softmax router logits, one row per token in arrival order.
    pub logits: Matrix,
    /// Argmax expert of every token (lowest index on ties).
    pub selected: Vec<usize>,
    /// Whether the token fit within its expert's capacity.
    pub kept: Vec<bool>,
    /// Tokens actually processed by each expert.
    pub dispatch_counts: Vec<u64>,
    pub dropped: u64,
    pub capacity: usize,
    /// Mean gate probability per expert over the batch.
    pub gate_mean: Vec<f64>,
}

impl MoeLayerStats {
    pub fn n_tokens(&self) -> usize {
        self.selected.len()
    }

    pub fn n_experts(&self) -> usize {
        self.gate_mean.len()
    }

    /// Fraction of tokens whose argmax is each expert, before capacity
    /// limits apply.
    pub fn dispatch_fraction(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.n_experts()];
        for &s in &self.selected {
            f[s] += 1.0;
        }
        let n = self.n_tokens().max(1) as f64;
        f.iter_mut().for_each(|v| *v /= n);
        f
    }

    /// `alpha * Σ_i f_i P_i` for this layer.
    pub fn load_balance_loss(&self, alpha: f64) -> f64 {
        alpha * dot(&self.dispatch_fraction(), &self.gate_mean)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardStats {
    /// One entry per MoE layer, in layer order.
    pub layers: Vec<MoeLayerStats>,
    /// Load-balancing loss summed over MoE layers with the config's alpha.
    pub load_balance_loss: f64,
    /// Mean next-token cross entropy within the batch; `None` for
    /// single-token sequences.
    pub mean_nll: Option<f64>,
}

/// Load-balancing loss `alpha * Σ_i f_i P_i`, summed over MoE layers.
///
/// This is the form without the extra factor of `M` that some top-1
/// routers multiply in: uniform routing gives `alpha / M` per layer.
pub fn load_balance_loss(stats: &ForwardStats, alpha: f64) -> f64 {
    stats.layers.iter().map(|l| l.load_balance_loss(alpha)).sum()
}

/// Softmax of the router logits `wᵀx`.
pub fn gate_values(router: &RouterWeights, x: &[f64]) -> Vec<f64> {
    softmax(&router.logits(x))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-expert token budget `max(min_capacity, ceil(capacity_factor * tokens / experts))`.
pub fn expert_capacity(tokens: usize, experts: usize, capacity_factor: f64, min_capacity: usize) -> usize {
    let even = (capacity_factor * tokens as f64 / experts as f64).ceil() as usize;
    even.max(min_capacity)
}

/// Top-1 routed mixture-of-experts layer over a flattened batch.
///
/// Each token goes to its argmax expert and the expert output is scaled by
/// that expert's gate value. Tokens arriving after their expert is full are
/// dropped and produce a zero vector.
pub fn moe_layer_forward(
    layer: &MoeLayer,
    xs: &[Vec<f64>],
    capacity_factor: f64,
    min_capacity: usize,
) -> (Vec<Vec<f64>>, MoeLayerStats) {
    let m = layer.router.n_experts();
    let d = layer.router.w.rows();
    let capacity = expert_capacity(xs.len(), m, capacity_factor, min_capacity);
    let mut logits = Matrix::zeros(xs.len(), m);
    let mut selected = Vec::with_capacity(xs.len());
    let mut kept = Vec::with_capacity(xs.len());
    let mut dispatch_counts = vec![0u64; m];
    let mut gate_mean = vec![0.0; m];
    let mut dropped = 0;
    let mut outputs = Vec::with_capacity(xs.len());

    for (t, x) in xs.iter().enumerate() {
        let h = layer.router.logits(x);
        logits.row_mut(t).copy_from_slice(&h);
        let gates = softmax(&h);
        for (acc, g) in gate_mean.iter_mut().zip(&gates) {
            *acc += g;
        }
        let e = argmax(&gates);
        selected.push(e);
        if (dispatch_counts[e] as usize) < capacity {
            dispatch_counts[e] += 1;
            kept.push(true);
            let mut y = layer.experts[e].forward(x);
            y.iter_mut().for_each(|v| *v *= gates[e]);
            outputs.push(y);
        } else {
            dropped += 1;
            kept.push(false);
            outputs.push(vec![0.0; d]);
        }
    }
    let n = xs.len().max(1) as f64;
    gate_mean.iter_mut().for_each(|v| *v /= n);
    let stats = MoeLayerStats {
        layer: 0,
        logits,
        selected,
        kept,
        dispatch_counts,
        dropped,
        capacity,
        gate_mean,
    };
    (outputs, stats)
}

fn check_tokens(ckpt: &SmoeCheckpoint, token_ids: &[Vec<u32>]) -> Result<usize> {
    let cfg = &ckpt.config;
    let seq = token_ids
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::validation("empty batch"))?;
    if seq == 0 {
        return Err(Error::validation("empty sequence"));
    }
    if token_ids.iter().any(|s| s.len() != seq) {
        return Err(Error::validation("sequences in a batch must share a length"));
    }
    if seq > cfg.context_length {
        return Err(Error::validation(format!(
            "sequence length {seq} exceeds context length {}",
            cfg.context_length
        )));
    }
    for s in token_ids {
        if let Some(&id) = s.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::validation(format!(
                "token id {id} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(seq)
}

fn causal_attention(attn: &Attention, xs: &[Vec<f64>], n_heads: usize) -> Vec<Vec<f64>> {
    let d = attn.q.w.rows();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q: Vec<Vec<f64>> = xs.iter().map(|x| attn.q.forward(x)).collect();
    let k: Vec<Vec<f64>> = xs.iter().map(|x| attn.k.forward(x)).collect();
    let v: Vec<Vec<f64>> = xs.iter().map(|x| attn.v.forward(x)).collect();
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        let mut mixed = vec![0.0; d];
        for h in 0..n_heads {
            let r = h * hd..(h + 1) * hd;
            let scores: Vec<f64> = (0..=t)
                .map(|s| dot(&q[t][r.clone()], &k[s][r.clone()]) * scale)
                .collect();
            let weights = softmax(&scores);
            for (s, w) in weights.iter().enumerate() {
                for (o, vv) in mixed[r.clone()].iter_mut().zip(&v[s][r.clone()]) {
                    *o += w * vv;
                }
            }
        }
        out.push(attn.o.forward(&mixed));
    }
    out
}

/// Pre-norm causal decoder forward pass.
///
/// Returns one `seq x vocab` logit matrix per batch row together with the
/// routing statistics of every MoE layer. MoE layers see the whole batch
/// flattened row-major, so capacity is shared across the batch.
pub fn model_forward(
    ckpt: &SmoeCheckpoint,
    token_ids: &[Vec<u32>],
    mode: Mode,
) -> Result<(Vec<Matrix>, ForwardStats)> {
    let seq = check_tokens(ckpt, token_ids)?;
    let cfg = &ckpt.config;
    let cf = match mode {
        Mode::Train => cfg.train_capacity_factor,
        Mode::Eval => cfg.eval_capacity_factor,
    };

    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(token_ids.len() * seq);
    for s in token_ids {
        for (t, &id) in s.iter().enumerate() {
            let tok = ckpt.token_embedding.row(id as usize);
            let pos = ckpt.position_embedding.row(t);
            hidden.push(tok.iter().zip(pos).map(|(a, b)| a + b).collect());
        }
    }

    let mut layers = Vec::new();
    for (l, block) in ckpt.blocks.iter().enumerate() {
        for chunk in hidden.chunks_mut(seq) {
            let normed: Vec<Vec<f64>> = chunk.iter().map(|x| block.ln1.forward(x)).collect();
            let attn = causal_attention(&block.attn, &normed, cfg.n_heads);
            for (x, a) in chunk.iter_mut().zip(attn) {
                x.iter_mut().zip(a).for_each(|(v, u)| *v += u);
            }
        }
        let normed: Vec<Vec<f64>> = hidden.iter().map(|x| block.ln2.forward(x)).collect();
        let ffn_out = match &block.ffn {
            FeedForward::Dense(e) => normed.iter().map(|x| e.forward(x)).collect(),
            FeedForward::Moe(moe) => {
                let (out, mut stats) = moe_layer_forward(moe, &normed, cf, cfg.min_expert_capacity);
                stats.layer = l;
                layers.push(stats);
                out
            }
        };
        for (x, f) in hidden.iter_mut().zip(ffn_out) {
            x.iter_mut().zip(f).for_each(|(v, u)| *v += u);
        }
    }

    let mut logits = Vec::with_capacity(token_ids.len());
    let mut nll_sum = 0.0;
    let mut nll_count = 0usize;
    for (b, chunk) in hidden.chunks(seq).enumerate() {
        let mut m = Matrix::zeros(seq, cfg.vocab_size);
        for (t, x) in chunk.iter().enumerate() {
            let normed = ckpt.ln_f.forward(x);
            let row = ckpt.token_embedding.matvec(&normed);
            m.row_mut(t).copy_from_slice(&row);
            if t + 1 < seq {
                nll_sum += token_nll(&row, token_ids[b][t + 1] as usize);
                nll_count += 1;
            }
        }
        logits.push(m);
    }

    let load_balance_loss = layers.iter().map(|s| s.load_balance_loss(cfg.alpha)).sum();
    let stats = ForwardStats {
        layers,
        load_balance_loss,
        mean_nll: (nll_count > 0).then(|| nll_sum / nll_count as f64),
    };
    Ok((logits, stats))
}

/// `-log softmax(logits)[target]`.
pub fn token_nll(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Mean next-token cross entropy over a token stream in eval mode.
///
/// The stream is cut into non-overlapping windows of `seq + 1` tokens
/// advancing by `seq`; each window predicts its last `seq` tokens from the
/// first `seq`. Windows are grouped `batch` at a time.
pub fn evaluate_nll(ckpt: &SmoeCheckpoint, stream: &[u32], batch: usize, seq: usize) -> Result<f64> {
    if batch == 0 || seq == 0 {
        return Err(Error::validation("batch and seq must be positive"));
    }
    if stream.len() < seq + 1 {
        return Err(Error::validation(format!(
            "token stream of {} ids is shorter than seq + 1 = {}",
            stream.len(),
            seq + 1
        )));
    }
    let n_windows = (stream.len() - 1) / seq;
    let windows: Vec<&[u32]> = (0..n_windows)
        .map(|w| &stream[w * seq..w * seq + seq + 1])
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for group in windows.chunks(batch) {
        let inputs: Vec<Vec<u32>> = group.iter().map(|w| w[..seq].to_vec()).collect();
        let (logits, _) = model_forward(ckpt, &inputs, Mode::Eval)?;
        for (w, m) in group.iter().zip(&logits) {
            for t in 0..seq {
                total += token_nll(m.row(t), w[t + 1] as usize);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}
