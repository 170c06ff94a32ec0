use moe_reduce::ckpt::Digest;
use moe_reduce::latsim::{simulate, sweep, Axis, LatencyParams, Routing};
use moe_reduce::model::ModelConfig;
use moe_reduce::numerics::Matrix;
use moe_reduce::trace::{RouterTrace, TraceLayer};
use proptest::prelude::*;

fn small_config(m: usize) -> ModelConfig {
    ModelConfig::new(64, 4, 6, m, 128, 128).with_d_ff(256)
}

fn params(gpus: usize, ep: usize, batch: usize) -> LatencyParams {
    LatencyParams {
        n_gpus: gpus,
        expert_parallel_degree: ep,
        batch_per_gpu: batch,
        seq_len: 128,
        ..LatencyParams::default()
    }
}

fn trace_with_counts(cfg: &ModelConfig, counts: &[u64]) -> RouterTrace {
    let n: u64 = counts.iter().sum();
    RouterTrace {
        model_hash: Digest([0; 32]),
        n_positions: n,
        layers: cfg
            .moe_layer_indices
            .iter()
            .map(|&layer| TraceLayer {
                layer,
                logits: Matrix::zeros(n as usize, counts.len()),
                counts: counts.to_vec(),
                dropped: 0,
            })
            .collect(),
    }
}

/// Closed-form per-MoE-layer time under uniform routing.
fn uniform_oracle(cfg: &ModelConfig, p: &LatencyParams) -> (f64, f64) {
    let d = cfg.d_model as f64;
    let f = cfg.d_ff as f64;
    let ep = p.expert_parallel_degree as f64;
    let load = (p.n_gpus * p.batch_per_gpu * p.seq_len) as f64 / ep;
    let compute = load * 6.0 * d * f / p.flops_per_sec_per_gpu;
    let bytes = load * (ep - 1.0) / ep * d * p.bytes_per_activation as f64;
    let comm = 2.0 * (p.all2all_latency_floor_sec + bytes / p.interconnect_bandwidth_bytes_per_sec);
    (compute, comm)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[test]
fn uniform_matches_the_closed_form() {
    let cfg = small_config(8);
    let p = params(16, 8, 4);
    let r = simulate(&cfg, &p, Routing::Uniform).unwrap();
    let (compute, comm) = uniform_oracle(&cfg, &p);
    let dense = (4 * 128) as f64 * 6.0 * 64.0 * 256.0 / p.flops_per_sec_per_gpu;
    assert_eq!(r.layers.len(), 6);
    for l in &r.layers {
        if l.moe {
            assert!(close(l.expert_compute_sec, compute));
            assert!(close(l.all2all_sec, comm));
        } else {
            assert!(close(l.expert_compute_sec, dense));
            assert_eq!(l.all2all_sec, 0.0);
        }
    }
}

#[test]
fn invalid_parallelism_is_rejected() {
    let cfg = small_config(8);
    assert!(simulate(&cfg, &params(8, 3, 1), Routing::Uniform).is_err());
    assert!(simulate(&cfg, &params(4, 8, 1), Routing::Uniform).is_err());
    assert!(simulate(&small_config(6), &params(8, 4, 1), Routing::Uniform).is_err());
    assert!(sweep(&cfg, &params(8, 8, 1), Axis::Batch, &[0]).is_err());
    let wrong = trace_with_counts(&small_config(4), &[1, 1, 1, 1]);
    assert!(simulate(&cfg, &params(8, 8, 1), Routing::Observed(&wrong)).is_err());
}

#[test]
fn params_json_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let mut v = serde_json::to_value(LatencyParams::default()).unwrap();
    v.as_object_mut().unwrap().remove("bytes_per_activation");
    std::fs::write(&path, v.to_string()).unwrap();
    assert_eq!(LatencyParams::load(&path).unwrap().bytes_per_activation, 2);
    v["warp_factor"] = 9.into();
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(LatencyParams::load(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn totals_are_sums_of_components(m_exp in 0u32..6, ep_exp in 0u32..4, batch in 1usize..16) {
        let ep = 1usize << ep_exp;
        let m = (1usize << m_exp).max(ep);
        let cfg = small_config(m);
        let r = simulate(&cfg, &params(ep * 2, ep, batch), Routing::Uniform).unwrap();
        let c: f64 = r.layers.iter().map(|l| l.expert_compute_sec).sum();
        let a: f64 = r.layers.iter().map(|l| l.all2all_sec).sum();
        prop_assert_eq!(r.expert_compute_sec, c);
        prop_assert_eq!(r.all2all_sec, a);
        prop_assert!(close(r.total_sec, c + a));
        prop_assert!((0.0..=1.0).contains(&r.all2all_fraction));
    }

    #[test]
    fn single_gpu_groups_only_pay_the_floor(batch in 1usize..32, gpus in 1usize..9) {
        let cfg = small_config(8);
        let p = params(gpus, 1, batch);
        let r = simulate(&cfg, &p, Routing::Uniform).unwrap();
        for l in r.layers.iter().filter(|l| l.moe) {
            prop_assert_eq!(l.all2all_sec, 2.0 * p.all2all_latency_floor_sec);
        }
    }

    #[test]
    fn cost_grows_with_gpus_and_batch(ep_exp in 0u32..3, base in 1usize..8) {
        let ep = 1usize << ep_exp;
        let cfg = small_config(8);
        let gpus: Vec<usize> = (1..6).map(|k| ep * k).collect();
        let rows = sweep(&cfg, &params(ep, ep, base), Axis::Gpus, &gpus).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].report.total_sec >= w[0].report.total_sec);
        }
        let rows = sweep(&cfg, &params(ep, ep, 1), Axis::Batch, &[base, base + 1, 2 * base + 3]).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].report.total_sec > w[0].report.total_sec);
        }
    }

    #[test]
    fn fewer_experts_never_cost_more(ep_exp in 0u32..4) {
        let ep = 1usize << ep_exp;
        let cfg = small_config(ep);
        let values: Vec<usize> = (0..5).map(|k| ep << k).collect();
        let rows = sweep(&cfg, &params(ep, ep, 4), Axis::Experts, &values).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[0].report.total_sec <= w[1].report.total_sec);
        }
    }

    #[test]
    fn observed_routing_is_bounded_below_by_uniform(
        counts in prop::collection::vec(0u64..1000, 8),
        ep_exp in 0u32..4,
    ) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let ep = 1usize << ep_exp;
        let cfg = small_config(8);
        let p = params(ep, ep, 2);
        let t = trace_with_counts(&cfg, &counts);
        let obs = simulate(&cfg, &p, Routing::Observed(&t)).unwrap();
        let uni = simulate(&cfg, &p, Routing::Uniform).unwrap();
        prop_assert!(obs.expert_compute_sec >= uni.expert_compute_sec * (1.0 - 1e-12));
        // The hottest GPU carries its round-robin share of the traffic.
        let total: u64 = counts.iter().sum();
        let mut share = vec![0u64; ep];
        for (i, c) in counts.iter().enumerate() {
            share[i % ep] += c;
        }
        let hot = *share.iter().max().unwrap() as f64 / total as f64;
        let (compute, _) = uniform_oracle(&cfg, &p);
        let moe = obs.layers.iter().find(|l| l.moe).unwrap();
        prop_assert!(close(moe.expert_compute_sec, compute * hot * ep as f64));

        let flat = trace_with_counts(&cfg, &[5; 8]);
        let same = simulate(&cfg, &p, Routing::Observed(&flat)).unwrap();
        prop_assert!(close(same.total_sec, uni.total_sec));
    }
}
