//! Parameter and FLOPs counts of the GPT2-medium backbone as the number of
//! experts per MoE layer grows.

use moe_reduce::model::{flops_per_token, param_count, ModelConfig};

fn main() {
    println!("{:>8} {:>16} {:>14} {:>16}", "experts", "params", "expert params", "flops/token");
    for m in [1, 8, 32, 64, 128] {
        let cfg = ModelConfig::gpt2_medium(m);
        let p = param_count(&cfg);
        let f = flops_per_token(&cfg);
        println!("{m:>8} {:>16} {:>14} {:>16}", p.total, p.experts, f.total_activated);
    }
}
