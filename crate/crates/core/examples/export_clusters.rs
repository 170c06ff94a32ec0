//! Write the spectral embedding and cluster label of every expert to CSV.

use moe_reduce::model::{self, ModelConfig};
use moe_reduce::numerics::Rng;
use moe_reduce::reduce::{self, ReduceOptions};
use moe_reduce::{tokens, trace};

fn main() -> moe_reduce::Result<()> {
    let cfg = ModelConfig::new(32, 4, 4, 8, 64, 64).with_d_ff(64);
    let mut rng = Rng::new(2);
    let planted = model::init_planted(&cfg, 2, 0.01, &mut rng)?;
    let stream = tokens::random_stream(cfg.vocab_size, 1024, &mut rng);
    let t = trace::harvest(&planted.checkpoint, &stream, 4, 32, 512)?;
    let (plan, report) = reduce::uncurl_plan_with_report(&t, &planted.checkpoint, 2, &ReduceOptions::default(), &mut rng)?;

    let dir = std::env::temp_dir().join(format!("smoe-clusters-{}", std::process::id()));
    for path in reduce::export_clusters(&report, &plan, &dir)? {
        println!("== {}", path.display());
        print!("{}", std::fs::read_to_string(&path).expect("just written"));
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
