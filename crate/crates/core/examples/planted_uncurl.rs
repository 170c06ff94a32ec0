//! Plant groups of permuted copies of a few base experts, then recover and
//! merge them from router logits alone.

use moe_reduce::model::{self, ModelConfig};
use moe_reduce::numerics::Rng;
use moe_reduce::reduce::{self, adjusted_rand_index, ReduceOptions};
use moe_reduce::{tokens, trace};

fn main() -> moe_reduce::Result<()> {
    let cfg = ModelConfig::new(32, 4, 4, 16, 64, 64).with_d_ff(128);
    let groups = 4;
    let mut rng = Rng::new(7);
    let planted = model::init_planted(&cfg, groups, 0.01, &mut rng)?;

    let stream = tokens::random_stream(cfg.vocab_size, 4096, &mut rng);
    let t = trace::harvest(&planted.checkpoint, &stream, 4, 32, 1024)?;
    let plan = reduce::uncurl_plan(&t, &planted.checkpoint, groups, &ReduceOptions::default(), &mut rng)?;

    for (lp, truth) in plan.layers.iter().zip(&planted.labels) {
        let ari = adjusted_rand_index(&lp.cluster_labels(), truth);
        println!("layer {}: references {:?} ari {ari:.3}", lp.layer, lp.references);
    }

    let reduced = reduce::apply_plan(&planted.checkpoint, &plan, &mut rng)?;
    let eval = tokens::random_stream(cfg.vocab_size, 1024, &mut rng);
    let before = model::evaluate_nll(&planted.checkpoint, &eval, 4, 32)?;
    let after = model::evaluate_nll(&reduced, &eval, 4, 32)?;
    println!(
        "params {} -> {}, nll {before:.4} -> {after:.4}",
        planted.checkpoint.param_count(),
        reduced.param_count()
    );
    Ok(())
}
