//! Expert-parallel latency of the GPT2-medium MoE as experts and GPUs vary.

use moe_reduce::latsim::{self, Axis, LatencyParams};
use moe_reduce::model::ModelConfig;

fn main() -> moe_reduce::Result<()> {
    let cfg = ModelConfig::gpt2_medium(32);
    let params = LatencyParams::default();

    println!("# experts");
    let rows = latsim::sweep(&cfg, &params, Axis::Experts, &[8, 16, 32, 64, 128])?;
    latsim::write_sweep_csv(&rows, std::io::stdout())?;

    println!("# gpus (expert-parallel groups of 8)");
    let rows = latsim::sweep(&cfg, &params, Axis::Gpus, &[8, 16, 32, 64])?;
    latsim::write_sweep_csv(&rows, std::io::stdout())?;
    Ok(())
}
