//! Shuffle an expert's hidden units and recover the shuffle by weight
//! matching.

use moe_reduce::model::{self, ModelConfig};
use moe_reduce::numerics::{Assignment, Rng};
use moe_reduce::reduce::align_experts;

fn main() -> moe_reduce::Result<()> {
    let cfg = ModelConfig::new(16, 2, 2, 2, 32, 16).with_d_ff(12);
    let mut rng = Rng::new(11);
    let ckpt = model::init_random(&cfg, &mut rng)?;
    let expert = &ckpt.moe_layer(0).expect("layer 0 is MoE").experts[0];

    let hidden = Assignment::new(rng.permutation(cfg.d_ff))?;
    let shuffled = expert.permute_hidden(&hidden)?;
    let (found, aligned) = align_experts(expert, &shuffled)?;

    println!("shuffle   {:?}", hidden.as_slice());
    println!("recovered {:?}", found.inverse().as_slice());
    println!("aligned copy equals the original: {}", &aligned == expert);
    Ok(())
}
