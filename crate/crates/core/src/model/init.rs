use crate::error::{Error, Result};
use crate::model::{
    Attention, Block, ExpertWeights, FeedForward, LayerNorm, Linear, ModelConfig, MoeLayer,
    RouterWeights, SmoeCheckpoint,
};
use crate::numerics::{Assignment, Matrix, Rng};

/// Standard deviation of every randomly initialised weight matrix.
pub const INIT_STD: f64 = 0.02;

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gaussian(std))
}

fn linear(d_out: usize, d_in: usize, rng: &mut Rng) -> Linear {
    Linear {
        w: gaussian_matrix(d_out, d_in, INIT_STD, rng),
        b: vec![0.0; d_out],
    }
}

pub(crate) fn random_expert(d_model: usize, d_ff: usize, rng: &mut Rng) -> ExpertWeights {
    ExpertWeights {
        w_in: gaussian_matrix(d_ff, d_model, INIT_STD, rng),
        b_in: vec![0.0; d_ff],
        w_out: gaussian_matrix(d_model, d_ff, INIT_STD, rng),
        b_out: vec![0.0; d_model],
    }
}

fn random_attention(d: usize, rng: &mut Rng) -> Attention {
    Attention {
        q: linear(d, d, rng),
        k: linear(d, d, rng),
        v: linear(d, d, rng),
        o: linear(d, d, rng),
    }
}

/// Random model: Gaussian(0, 0.02) embeddings, projections, experts and
/// routers; zero biases; unit layernorms. Weights are rounded to `f32` so
/// the checkpoint survives a save/load round trip unchanged.
pub fn init_random(config: &ModelConfig, rng: &mut Rng) -> Result<SmoeCheckpoint> {
    config.validate()?;
    let d = config.d_model;
    let token_embedding = gaussian_matrix(config.vocab_size, d, INIT_STD, rng);
    let position_embedding = gaussian_matrix(config.context_length, d, INIT_STD, rng);
    let mut blocks = Vec::with_capacity(config.n_layers);
    for layer in 0..config.n_layers {
        let attn = random_attention(d, rng);
        let ffn = if config.is_moe_layer(layer) {
            let z = config.experts_in_layer(layer);
            let router = RouterWeights {
                w: gaussian_matrix(d, z, INIT_STD, rng),
            };
            let experts = (0..z).map(|_| random_expert(config.d_model, config.d_ff, rng)).collect();
            FeedForward::Moe(MoeLayer { router, experts })
        } else {
            FeedForward::Dense(random_expert(config.d_model, config.d_ff, rng))
        };
        blocks.push(Block {
            ln1: LayerNorm::identity(d),
            attn,
            ln2: LayerNorm::identity(d),
            ffn,
        });
    }
    let mut ckpt = SmoeCheckpoint {
        config: config.clone(),
        token_embedding,
        position_embedding,
        blocks,
        ln_f: LayerNorm::identity(d),
    };
    ckpt.round_to_f32();
    Ok(ckpt)
}

/// Parameters of a planted-partition model.
#[derive(Clone, Debug)]
pub struct PlantedOptions {
    pub n_groups: usize,
    /// Gaussian noise added to every member expert's weights.
    pub expert_noise: f64,
    /// Gaussian noise added to every member's router column.
    pub router_noise: f64,
    /// Group whose router columns are pushed toward the layer input's
    /// layernorm bias so it wins most tokens.
    pub dominant_group: Option<usize>,
    /// Size of the logit offset the dominant group receives.
    pub dominance: f64,
}

impl PlantedOptions {
    pub fn new(n_groups: usize, noise: f64) -> Self {
        Self {
            n_groups,
            expert_noise: noise,
            router_noise: noise,
            dominant_group: None,
            dominance: 1.0,
        }
    }
}

/// A model whose experts come in known groups.
#[derive(Clone, Debug)]
pub struct Planted {
    pub checkpoint: SmoeCheckpoint,
    /// Ground-truth group of every expert, per MoE layer (in layer order).
    pub labels: Vec<Vec<usize>>,
    /// The base expert of every group, per MoE layer.
    pub bases: Vec<Vec<ExpertWeights>>,
}

/// [`init_planted_with`] using the same noise for experts and router.
pub fn init_planted(
    config: &ModelConfig,
    n_groups: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<Planted> {
    init_planted_with(config, &PlantedOptions::new(n_groups, noise_std), rng)
}

/// Builds a model whose MoE layers consist of `n_groups` contiguous groups
/// of experts. Each member is a random hidden-unit permutation of its
/// group's base expert plus noise; each member's router column is the
/// group's base column plus noise.
pub fn init_planted_with(
    config: &ModelConfig,
    opts: &PlantedOptions,
    rng: &mut Rng,
) -> Result<Planted> {
    let g = opts.n_groups;
    for (layer, z) in config.moe_layers() {
        if g == 0 || z % g != 0 {
            return Err(Error::validation(format!(
                "{g} groups do not divide {z} experts in layer {layer}"
            )));
        }
    }
    if let Some(dg) = opts.dominant_group {
        if dg >= g {
            return Err(Error::validation(format!(
                "dominant group {dg} out of range for {g} groups"
            )));
        }
    }
    let mut ckpt = init_random(config, rng)?;
    let d = config.d_model;
    let mut labels = Vec::new();
    let mut bases = Vec::new();

    for (layer, z) in config.moe_layers() {
        let per_group = z / g;
        let group_bases: Vec<ExpertWeights> = (0..g).map(|_| random_expert(config.d_model, config.d_ff, rng)).collect();
        let mut base_columns: Vec<Vec<f64>> = (0..g)
            .map(|_| (0..d).map(|_| rng.gaussian(INIT_STD)).collect())
            .collect();

        let block = &mut ckpt.blocks[layer];
        if let Some(dg) = opts.dominant_group {
            let bias: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let sq: f64 = bias.iter().map(|v| v * v).sum();
            for (c, b) in base_columns[dg].iter_mut().zip(&bias) {
                *c += opts.dominance * b / sq;
            }
            block.ln2.beta = bias;
        }

        let mut experts = Vec::with_capacity(z);
        let mut router = Matrix::zeros(d, z);
        for e in 0..z {
            let group = e / per_group;
            let perm = Assignment::new(rng.permutation(config.d_ff))?;
            let mut expert = group_bases[group].permute_hidden(&perm)?;
            if opts.expert_noise > 0.0 {
                add_noise(&mut expert, opts.expert_noise, rng);
            }
            experts.push(expert);
            for (r, base) in base_columns[group].iter().enumerate() {
                let jitter = if opts.router_noise > 0.0 {
                    rng.gaussian(opts.router_noise)
                } else {
                    0.0
                };
                router[(r, e)] = base + jitter;
            }
        }
        block.ffn = FeedForward::Moe(MoeLayer {
            router: RouterWeights { w: router },
            experts,
        });
        labels.push((0..z).map(|e| e / per_group).collect());
        bases.push(group_bases);
    }
    ckpt.round_to_f32();
    // bases must match the stored (rounded) members exactly
    for layer_bases in &mut bases {
        layer_bases.iter_mut().for_each(ExpertWeights::round_to_f32);
    }
    Ok(Planted {
        checkpoint: ckpt,
        labels,
        bases,
    })
}

fn add_noise(e: &mut ExpertWeights, std: f64, rng: &mut Rng) {
    for v in e.w_in.as_mut_slice() {
        *v += rng.gaussian(std);
    }
    for v in &mut e.b_in {
        *v += rng.gaussian(std);
    }
    for v in e.w_out.as_mut_slice() {
        *v += rng.gaussian(std);
    }
    for v in &mut e.b_out {
        *v += rng.gaussian(std);
    }
}
