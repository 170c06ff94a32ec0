use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{Assignment, Matrix};

/// Affine map `y = w x + b` with `w` stored as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (o, b) in y.iter_mut().zip(&self.b) {
            *o += b;
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn identity(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + Self::EPS).sqrt();
        x.iter()
            .zip(self.gamma.iter().zip(&self.beta))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Two-layer feed-forward network `x -> w_out · gelu(w_in · x + b_in) + b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertWeights {
    /// `d_ff x d_model`
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    /// `d_model x d_ff`
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl ExpertWeights {
    pub fn zeros(d_model: usize, d_ff: usize) -> Self {
        Self {
            w_in: Matrix::zeros(d_ff, d_model),
            b_in: vec![0.0; d_ff],
            w_out: Matrix::zeros(d_model, d_ff),
            b_out: vec![0.0; d_model],
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_in.cols()
    }

    pub fn d_ff(&self) -> usize {
        self.w_in.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w_in.rows() * self.w_in.cols()
            + self.b_in.len()
            + self.w_out.rows() * self.w_out.cols()
            + self.b_out.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.w_in.matvec(x);
        for (v, b) in h.iter_mut().zip(&self.b_in) {
            *v = gelu(*v + b);
        }
        let mut y = self.w_out.matvec(&h);
        for (v, b) in y.iter_mut().zip(&self.b_out) {
            *v += b;
        }
        y
    }

    /// Reorders hidden units so that new unit `i` is old unit `perm[i]`
    /// (rows of `w_in`, entries of `b_in`, columns of `w_out`). The mapping
    /// the expert computes is unchanged.
    pub fn permute_hidden(&self, perm: &Assignment) -> Result<Self> {
        if perm.len() != self.d_ff() {
            return Err(Error::validation(format!(
                "permutation of length {} for {} hidden units",
                perm.len(),
                self.d_ff()
            )));
        }
        let order = perm.as_slice();
        Ok(Self {
            w_in: self.w_in.select_rows(order),
            b_in: order.iter().map(|&i| self.b_in[i]).collect(),
            w_out: self.w_out.select_columns(order),
            b_out: self.b_out.clone(),
        })
    }

    pub fn check_dims(&self, d_model: usize, d_ff: usize) -> Result<()> {
        if self.w_in.shape() != (d_ff, d_model)
            || self.b_in.len() != d_ff
            || self.w_out.shape() != (d_model, d_ff)
            || self.b_out.len() != d_model
        {
            return Err(Error::validation(format!(
                "expert shapes w_in {:?}, w_out {:?} do not match d_model {d_model}, d_ff {d_ff}",
                self.w_in.shape(),
                self.w_out.shape()
            )));
        }
        Ok(())
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &ExpertWeights, s: f64) {
        self.w_in.add_scaled(&other.w_in, s);
        self.w_out.add_scaled(&other.w_out, s);
        for (a, b) in self.b_in.iter_mut().zip(&other.b_in) {
            *a += s * b;
        }
        for (a, b) in self.b_out.iter_mut().zip(&other.b_out) {
            *a += s * b;
        }
    }

    pub fn round_to_f32(&mut self) {
        self.w_in.round_to_f32();
        self.w_out.round_to_f32();
        round_vec(&mut self.b_in);
        round_vec(&mut self.b_out);
    }
}

/// Router `h(x) = wᵀ x` with `w` stored `d_model x n_experts`.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterWeights {
    pub w: Matrix,
}

impl RouterWeights {
    pub fn n_experts(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.w.matvec_t(x)
    }

    pub fn keep_columns(&self, columns: &[usize]) -> RouterWeights {
        RouterWeights {
            w: self.w.select_columns(columns),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoeLayer {
    pub router: RouterWeights,
    pub experts: Vec<ExpertWeights>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeedForward {
    Dense(ExpertWeights),
    Moe(MoeLayer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

/// Complete weights of a decoder. The output head is tied to the token
/// embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoeCheckpoint {
    pub config: ModelConfig,
    /// `vocab_size x d_model`
    pub token_embedding: Matrix,
    /// `context_length x d_model`
    pub position_embedding: Matrix,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

impl SmoeCheckpoint {
    pub fn moe_layer(&self, layer: usize) -> Option<&MoeLayer> {
        match &self.blocks.get(layer)?.ffn {
            FeedForward::Moe(m) => Some(m),
            FeedForward::Dense(_) => None,
        }
    }

    pub fn moe_layer_mut(&mut self, layer: usize) -> Option<&mut MoeLayer> {
        match &mut self.blocks.get_mut(layer)?.ffn {
            FeedForward::Moe(m) => Some(m),
            FeedForward::Dense(_) => None,
        }
    }

    /// Checks that the tensors agree with the config: MoE layers exactly at
    /// `moe_layer_indices` with the configured expert counts, and every
    /// shape consistent.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let d = cfg.d_model;
        let bad = |m: String| Err(Error::Validation(format!("checkpoint structure: {m}")));
        if self.token_embedding.shape() != (cfg.vocab_size, d) {
            return bad(format!("token embedding {:?}", self.token_embedding.shape()));
        }
        if self.position_embedding.shape() != (cfg.context_length, d) {
            return bad(format!(
                "position embedding {:?}",
                self.position_embedding.shape()
            ));
        }
        if self.blocks.len() != cfg.n_layers {
            return bad(format!("{} blocks for {} layers", self.blocks.len(), cfg.n_layers));
        }
        check_ln(&self.ln_f, d)?;
        for (l, block) in self.blocks.iter().enumerate() {
            check_ln(&block.ln1, d)?;
            check_ln(&block.ln2, d)?;
            for lin in [&block.attn.q, &block.attn.k, &block.attn.v, &block.attn.o] {
                if lin.w.shape() != (d, d) || lin.b.len() != d {
                    return bad(format!("layer {l} attention projection {:?}", lin.w.shape()));
                }
            }
            match (&block.ffn, cfg.is_moe_layer(l)) {
                (FeedForward::Dense(e), false) => e.check_dims(d, cfg.d_ff)?,
                (FeedForward::Moe(m), true) => {
                    let z = cfg.experts_in_layer(l);
                    if m.experts.len() != z || m.router.w.shape() != (d, z) {
                        return bad(format!(
                            "layer {l} has {} experts and router {:?}, config says {z}",
                            m.experts.len(),
                            m.router.w.shape()
                        ));
                    }
                    for e in &m.experts {
                        e.check_dims(d, cfg.d_ff)?;
                    }
                }
                (FeedForward::Dense(_), true) => return bad(format!("layer {l} should be MoE")),
                (FeedForward::Moe(_), false) => return bad(format!("layer {l} should be dense")),
            }
        }
        Ok(())
    }

    /// Number of stored scalars (the tied head is not counted twice).
    pub fn param_count(&self) -> usize {
        let lin = |l: &Linear| l.w.rows() * l.w.cols() + l.b.len();
        let ln = |n: &LayerNorm| n.gamma.len() + n.beta.len();
        let mut total = self.token_embedding.as_slice().len()
            + self.position_embedding.as_slice().len()
            + ln(&self.ln_f);
        for b in &self.blocks {
            total += ln(&b.ln1) + ln(&b.ln2);
            total += lin(&b.attn.q) + lin(&b.attn.k) + lin(&b.attn.v) + lin(&b.attn.o);
            total += match &b.ffn {
                FeedForward::Dense(e) => e.param_count(),
                FeedForward::Moe(m) => {
                    m.router.w.as_slice().len()
                        + m.experts.iter().map(ExpertWeights::param_count).sum::<usize>()
                }
            };
        }
        total
    }

    /// Rounds every weight to `f32`, the on-disk precision.
    pub fn round_to_f32(&mut self) {
        self.token_embedding.round_to_f32();
        self.position_embedding.round_to_f32();
        round_ln(&mut self.ln_f);
        for b in &mut self.blocks {
            round_ln(&mut b.ln1);
            round_ln(&mut b.ln2);
            for lin in [&mut b.attn.q, &mut b.attn.k, &mut b.attn.v, &mut b.attn.o] {
                lin.w.round_to_f32();
                round_vec(&mut lin.b);
            }
            match &mut b.ffn {
                FeedForward::Dense(e) => e.round_to_f32(),
                FeedForward::Moe(m) => {
                    m.router.w.round_to_f32();
                    m.experts.iter_mut().for_each(ExpertWeights::round_to_f32);
                }
            }
        }
    }
}

fn check_ln(ln: &LayerNorm, d: usize) -> Result<()> {
    if ln.gamma.len() != d || ln.beta.len() != d {
        return Err(Error::validation(format!(
            "layernorm of width {} in a model of width {d}",
            ln.gamma.len()
        )));
    }
    Ok(())
}

fn round_ln(ln: &mut LayerNorm) {
    round_vec(&mut ln.gamma);
    round_vec(&mut ln.beta);
}

fn round_vec(v: &mut [f64]) {
    for x in v {
        *x = f64::from(*x as f32);
    }
}

/// GELU, tanh approximation (the GPT2 variant).
#[inline]
pub fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}
