//! Every reduction method on a planted model where one group takes most of
//! the traffic. Frequency pruning keeps only that group's experts; the
//! clustering-based merge keeps one expert per group.

use moe_reduce::model::{self, ExpertWeights, ModelConfig, PlantedOptions};
use moe_reduce::numerics::Rng;
use moe_reduce::reduce::{self, Method, ReduceOptions};
use moe_reduce::{tokens, trace};

fn distance(a: &ExpertWeights, b: &ExpertWeights, rng: &mut Rng) -> f64 {
    (0..20)
        .map(|_| {
            let x: Vec<f64> = (0..a.d_model()).map(|_| rng.normal()).collect();
            let (ya, yb) = (a.forward(&x), b.forward(&x));
            ya.iter().zip(&yb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn main() -> moe_reduce::Result<()> {
    let cfg = ModelConfig::new(32, 4, 4, 8, 64, 64).with_d_ff(128);
    let mut rng = Rng::new(3);
    let opts = PlantedOptions {
        router_noise: 0.002,
        dominant_group: Some(0),
        dominance: 4.0,
        ..PlantedOptions::new(2, 0.0)
    };
    let planted = model::init_planted_with(&cfg, &opts, &mut rng)?;
    let stream = tokens::random_stream(cfg.vocab_size, 4096, &mut rng);
    let t = trace::harvest(&planted.checkpoint, &stream, 4, 32, 1024)?;
    println!("layer 0 counts {:?}", t.layers[0].counts);

    for method in [Method::Uncurl, Method::FreqPrune, Method::FreqMerge, Method::GlobalMerge] {
        let plan = reduce::plan(method, &t, &planted.checkpoint, 2, &ReduceOptions::default(), &mut rng)?;
        let reduced = reduce::apply_plan(&planted.checkpoint, &plan, &mut rng)?;
        let layer = &reduced.moe_layer(0).expect("layer 0 is MoE").experts;
        // Distance from each base expert to its closest surviving expert.
        let gaps: Vec<String> = planted.bases[0]
            .iter()
            .map(|base| {
                let d = layer.iter().map(|e| distance(e, base, &mut rng)).fold(f64::INFINITY, f64::min);
                format!("{d:.2e}")
            })
            .collect();
        println!("{:<13} kept {:?} base gaps {gaps:?}", method.as_str(), plan.layers[0].references);
    }
    Ok(())
}
