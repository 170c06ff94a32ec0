//! Route one batch through a small random model and print what each MoE
//! layer did with it.

use moe_reduce::model::{self, Mode, ModelConfig};
use moe_reduce::numerics::Rng;
use moe_reduce::tokens;

fn main() -> moe_reduce::Result<()> {
    let cfg = ModelConfig::new(32, 4, 4, 8, 64, 64).with_d_ff(128);
    let mut rng = Rng::new(0);
    let ckpt = model::init_random(&cfg, &mut rng)?;
    let batch: Vec<Vec<u32>> = (0..4).map(|_| tokens::random_stream(cfg.vocab_size, 32, &mut rng)).collect();

    for mode in [Mode::Train, Mode::Eval] {
        let (_, stats) = model::model_forward(&ckpt, &batch, mode)?;
        println!("{mode:?}: load-balance loss {:.6}", stats.load_balance_loss);
        for l in &stats.layers {
            println!(
                "  layer {}: capacity {} dispatched {:?} dropped {}",
                l.layer, l.capacity, l.dispatch_counts, l.dropped
            );
        }
        if let Some(nll) = stats.mean_nll {
            println!("  mean next-token nll {nll:.4}");
        }
    }
    println!("uniform routing would give {:.6} per layer", cfg.alpha / cfg.n_experts as f64);
    Ok(())
}
