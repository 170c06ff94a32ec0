//! Save a model and a router trace, reload both and check the trace still
//! matches the model it was harvested from.

use moe_reduce::model::{self, ModelConfig};
use moe_reduce::numerics::Rng;
use moe_reduce::trace::{self, RouterTrace};
use moe_reduce::{ckpt, tokens};

fn main() -> moe_reduce::Result<()> {
    let dir = std::env::temp_dir().join(format!("smoe-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| moe_reduce::Error::Io { path: dir.clone(), source: e })?;

    let cfg = ModelConfig::new(32, 4, 4, 4, 64, 64).with_d_ff(64);
    let mut rng = Rng::new(5);
    let m = model::init_random(&cfg, &mut rng)?;
    let model_path = dir.join("model.smoe");
    let digest = ckpt::save(&m, &model_path)?;
    println!("saved {} ({digest})", model_path.display());

    let stream = tokens::random_stream(cfg.vocab_size, 512, &mut rng);
    let t = trace::harvest(&m, &stream, 2, 32, 256)?;
    let trace_path = dir.join("router.trace");
    t.save(&trace_path)?;

    let (back, back_digest) = ckpt::load_with_digest(&model_path)?;
    let t2 = RouterTrace::load(&trace_path)?;
    t2.check_digest(&back_digest)?;
    println!("reloaded model equal: {}, trace equal: {}", back == m, t2 == t);

    let mut bytes = std::fs::read(&model_path).expect("just written");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    match ckpt::from_bytes(&bytes) {
        Err(e) => println!("flipped byte rejected: {}: {e}", e.category()),
        Ok(_) => println!("flipped byte went unnoticed"),
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
