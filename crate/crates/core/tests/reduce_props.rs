mod common;

use moe_reduce::ckpt::Digest;
use moe_reduce::model::{init_planted, init_random, model_forward, param_count, ExpertWeights, Mode, SmoeCheckpoint};
use moe_reduce::numerics::{sym_eigen, Matrix, Rng};
use moe_reduce::reduce::{
    self, adjusted_rand_index, align_experts, apply_plan, export_clusters, freq_merge_plan, freq_prune_plan,
    global_merge_plan, similarity, spectral_embed, uncurl_plan, uncurl_plan_with_report, LayerPlan, MergePlan,
    Method, ReduceOptions, RouterDisposition,
};
use moe_reduce::tokens;
use moe_reduce::trace::{harvest, RouterTrace, TraceLayer};
use moe_reduce::Error;
use proptest::prelude::*;

use common::{expert_gap, tiny_config};

fn trace_of(ck: &SmoeCheckpoint, seed: u64) -> RouterTrace {
    let stream = tokens::random_stream(ck.config.vocab_size, 1024, &mut Rng::new(seed));
    harvest(ck, &stream, 4, 32, 512).unwrap()
}

/// A trace with hand-written logits and counts for layers 0 and 2.
fn synthetic_trace(logits: Matrix, counts: Vec<u64>) -> RouterTrace {
    let layer = |l| TraceLayer {
        layer: l,
        logits: logits.clone(),
        counts: counts.clone(),
        dropped: 0,
    };
    RouterTrace {
        model_hash: Digest([0; 32]),
        n_positions: logits.rows() as u64,
        layers: vec![layer(0), layer(2)],
    }
}

#[test]
fn similarity_of_duplicate_and_negated_columns() {
    let h = Matrix::from_rows(&[vec![1.0, 1.0, -1.0, 0.3], vec![2.0, 2.0, -2.0, -0.7], vec![0.5, 0.5, -0.5, 0.1]])
        .unwrap();
    let t = synthetic_trace(h, vec![1; 4]);
    let s = similarity(&t, 0).unwrap();
    assert_eq!(s[(0, 1)], 1.0);
    assert_eq!(s[(0, 2)], 0.0);
    for i in 0..4 {
        assert_eq!(s[(i, i)], 1.0);
    }
    assert!(similarity(&t, 1).is_err());
}

#[test]
fn zero_logit_column_reports_layer_and_expert() {
    let h = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.5, 0.0, 1.0]]).unwrap();
    let t = synthetic_trace(h, vec![1, 0, 1]);
    match similarity(&t, 2) {
        Err(Error::DegenerateColumn { layer, expert }) => {
            assert_eq!(layer, Some(2));
            assert_eq!(expert, 1);
        }
        other => panic!("expected degenerate column error, got {other:?}"),
    }
}

#[test]
fn planted_similarity_has_block_structure() {
    let cfg = tiny_config(8);
    let planted = init_planted(&cfg, 2, 0.0, &mut Rng::new(1)).unwrap();
    let t = trace_of(&planted.checkpoint, 2);
    for (i, &layer) in cfg.moe_layer_indices.iter().enumerate() {
        let s = similarity(&t, layer).unwrap();
        let labels = &planted.labels[i];
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for a in 0..8 {
            for b in 0..8 {
                if labels[a] == labels[b] {
                    assert!(s[(a, b)] >= 0.999);
                    within += s[(a, b)];
                    nw += 1;
                } else {
                    across += s[(a, b)];
                    na += 1;
                }
            }
        }
        assert!(within / nw as f64 > across / na as f64);
    }
}

#[test]
fn uncurl_recovers_planted_groups_for_all_sizes() {
    for z in [4, 8, 16] {
        for groups in [2, 4] {
            for seed in 0..3 {
                let cfg = tiny_config(z);
                let mut rng = Rng::new(seed * 31 + z as u64);
                let planted = init_planted(&cfg, groups, 0.0, &mut rng).unwrap();
                let t = trace_of(&planted.checkpoint, seed);
                let plan = uncurl_plan(&t, &planted.checkpoint, groups, &ReduceOptions::default(), &mut rng).unwrap();
                for (i, lp) in plan.layers.iter().enumerate() {
                    assert_eq!(adjusted_rand_index(&lp.cluster_labels(), &planted.labels[i]), 1.0);
                    assert_eq!(lp.router, RouterDisposition::Reinitialize);
                    lp.validate(z, cfg.d_ff).unwrap();
                }
            }
        }
    }
}

#[test]
fn noisy_planted_groups_are_still_recovered() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(9);
    let planted = init_planted(&cfg, 2, 1e-3, &mut rng).unwrap();
    let t = trace_of(&planted.checkpoint, 1);
    let plan = uncurl_plan(&t, &planted.checkpoint, 2, &ReduceOptions::default(), &mut rng).unwrap();
    let reduced = apply_plan(&planted.checkpoint, &plan, &mut rng).unwrap();
    for (i, lp) in plan.layers.iter().enumerate() {
        assert_eq!(adjusted_rand_index(&lp.cluster_labels(), &planted.labels[i]), 1.0);
        // Averaging aligned noisy copies lands near the base expert.
        for c in 0..2 {
            let g = planted.labels[i][lp.references[c]];
            let experts = &reduced.moe_layer(lp.layer).unwrap().experts;
            assert!(expert_gap(&experts[c], &planted.bases[i][g], 20, &mut rng) < 1e-2);
        }
    }
}

#[test]
fn target_equal_to_expert_count_is_an_identity() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(3);
    let ck = init_random(&cfg, &mut rng).unwrap();
    let t = trace_of(&ck, 4);
    for method in [Method::Uncurl, Method::FreqPrune, Method::FreqMerge, Method::GlobalMerge] {
        let opts = ReduceOptions {
            router: Some(RouterDisposition::KeepColumns),
            ..ReduceOptions::default()
        };
        let plan = reduce::plan(method, &t, &ck, 8, &opts, &mut rng).unwrap();
        for lp in &plan.layers {
            assert_eq!(lp.labels, (0..8).map(Some).collect::<Vec<_>>(), "{method:?}");
            assert!(lp.permutations.iter().all(|p| p.as_ref().unwrap().is_identity()));
        }
        let out = apply_plan(&ck, &plan, &mut rng).unwrap();
        assert_eq!(out.param_count(), ck.param_count());
        assert_eq!(out.blocks, ck.blocks, "{method:?}");
    }
}

#[test]
fn parameter_reduction_matches_expert_and_router_delta() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(5);
    let planted = init_planted(&cfg, 4, 0.01, &mut rng).unwrap();
    let t = trace_of(&planted.checkpoint, 6);
    for d in [1, 2, 4, 7] {
        let plan = uncurl_plan(&t, &planted.checkpoint, d, &ReduceOptions::default(), &mut rng).unwrap();
        let out = apply_plan(&planted.checkpoint, &plan, &mut rng).unwrap();
        let expert = ExpertWeights::zeros(cfg.d_model, cfg.d_ff).param_count();
        let layers = cfg.n_moe_layers();
        let delta = layers * (8 - d) * (expert + cfg.d_model);
        assert_eq!(planted.checkpoint.param_count() - out.param_count(), delta);
        assert_eq!(out.config.n_experts, d);
        assert_eq!(param_count(&out.config).total as usize, out.param_count());
        for (_, z) in out.config.moe_layers() {
            assert_eq!(z, d);
        }
    }
}

#[test]
fn identical_cluster_merges_to_the_member() {
    let cfg = tiny_config(4);
    let mut rng = Rng::new(7);
    let mut ck = init_random(&cfg, &mut rng).unwrap();
    let layer = ck.moe_layer_mut(0).unwrap();
    let e0 = layer.experts[0].clone();
    layer.experts[1] = e0.clone();
    let mut plan = reduce::plan(Method::Identity, &trace_of(&ck, 1), &ck, 4, &ReduceOptions::default(), &mut rng)
        .unwrap();
    let mut lp = LayerPlan::identity(0, 4, cfg.d_ff);
    lp.labels = vec![Some(0), Some(0), Some(1), Some(2)];
    lp.n_clusters = 3;
    lp.references = vec![0, 2, 3];
    lp.weights = vec![0.3, 0.7, 1.0, 1.0];
    plan.layers[0] = lp;
    let out = apply_plan(&ck, &plan, &mut rng).unwrap();
    let merged = &out.moe_layer(0).unwrap().experts[0];
    assert!(merged.w_in.max_abs_diff(&e0.w_in) < 1e-7);
    assert!(merged.w_out.max_abs_diff(&e0.w_out) < 1e-7);
    assert_eq!(out.config.expert_counts, Some(vec![3, 4]));
}

#[test]
fn apply_plan_rejects_mismatched_structure() {
    let cfg = tiny_config(4);
    let mut rng = Rng::new(8);
    let ck = init_random(&cfg, &mut rng).unwrap();
    let bad = MergePlan {
        method: Method::Identity,
        target: 4,
        layers: vec![LayerPlan::identity(0, 4, cfg.d_ff)],
    };
    assert!(matches!(apply_plan(&ck, &bad, &mut rng), Err(Error::Validation(_))));
    let bad = MergePlan {
        method: Method::Identity,
        target: 4,
        layers: vec![LayerPlan::identity(0, 5, cfg.d_ff), LayerPlan::identity(2, 4, cfg.d_ff)],
    };
    assert!(matches!(apply_plan(&ck, &bad, &mut rng), Err(Error::Validation(_))));
}

#[test]
fn singleton_keep_columns_reduction_preserves_the_forward_pass() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(10);
    let ck = init_random(&cfg, &mut rng).unwrap();
    let t = trace_of(&ck, 11);
    let opts = ReduceOptions {
        router: Some(RouterDisposition::KeepColumns),
        ..ReduceOptions::default()
    };
    let plan = uncurl_plan(&t, &ck, 8, &opts, &mut rng).unwrap();
    let out = apply_plan(&ck, &plan, &mut rng).unwrap();
    for _ in 0..10 {
        let batch: Vec<Vec<u32>> = (0..2).map(|_| tokens::random_stream(64, 16, &mut rng)).collect();
        let (a, _) = model_forward(&ck, &batch, Mode::Eval).unwrap();
        let (b, _) = model_forward(&out, &batch, Mode::Eval).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.max_abs_diff(y) <= 1e-6);
        }
    }
}

#[test]
fn freq_prune_examples() {
    let logits = Matrix::from_fn(4, 8, |r, c| 1.0 + (r * 8 + c) as f64);
    let cfg = tiny_config(8);
    let ck = init_random(&cfg, &mut Rng::new(1)).unwrap();
    let t = synthetic_trace(logits.clone(), vec![5, 4, 3, 2, 1, 0, 0, 0]);
    let plan = freq_prune_plan(&t, &ck, 4, &ReduceOptions::default()).unwrap();
    assert_eq!(plan.layers[0].references, vec![0, 1, 2, 3]);
    assert_eq!(plan.layers[0].labels[4..], [None, None, None, None]);
    assert_eq!(plan.layers[0].router, RouterDisposition::KeepColumns);
    let t = synthetic_trace(logits, vec![3; 8]);
    let plan = freq_prune_plan(&t, &ck, 2, &ReduceOptions::default()).unwrap();
    assert_eq!(plan.layers[0].references, vec![0, 1]);
    assert!(freq_prune_plan(&t, &ck, 9, &ReduceOptions::default()).is_err());
    let out = apply_plan(&ck, &plan, &mut Rng::new(2)).unwrap();
    let layer = out.moe_layer(0).unwrap();
    assert_eq!(layer.experts[1], ck.moe_layer(0).unwrap().experts[1]);
    assert_eq!(layer.router.w.column(1), ck.moe_layer(0).unwrap().router.w.column(1));
}

#[test]
fn freq_prune_keeps_the_recounted_top_experts() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(12);
    let mut ck = init_random(&cfg, &mut rng).unwrap();
    for l in [0, 2] {
        ck.moe_layer_mut(l).unwrap().router.w.scale(50.0);
    }
    let t = trace_of(&ck, 13);
    let plan = freq_prune_plan(&t, &ck, 3, &ReduceOptions::default()).unwrap();
    for layer in &t.layers {
        // Argmax over stored logits bounds the post-capacity counts from above.
        let mut naive = [0u64; 8];
        for r in 0..layer.logits.rows() {
            let row = layer.logits.row(r);
            let best = (1..8).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            naive[best] += 1;
        }
        assert!(layer.dropped > 0);
        assert_eq!(naive.iter().sum::<u64>(), layer.counts.iter().sum::<u64>() + layer.dropped);
        assert!(naive.iter().zip(&layer.counts).all(|(n, c)| n >= c));

        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| layer.counts[b].cmp(&layer.counts[a]).then(a.cmp(&b)));
        let mut top = order[..3].to_vec();
        top.sort_unstable();
        assert_eq!(plan.layer(layer.layer).unwrap().references, top);
    }
}

#[test]
fn freq_merge_labels_to_the_most_similar_anchor() {
    // Expert 2 is the non-anchor; its logits align with expert 0 far better
    // than with expert 1.
    let logits = Matrix::from_rows(&[vec![1.0, 0.0, 0.9], vec![0.0, 1.0, 0.2], vec![1.0, 0.1, 1.0]]).unwrap();
    let cfg = tiny_config(3).with_moe_layers(vec![0, 2]);
    let ck = init_random(&cfg, &mut Rng::new(3)).unwrap();
    let t = synthetic_trace(logits, vec![5, 4, 1]);
    let plan = freq_merge_plan(&t, &ck, 2, &ReduceOptions::default()).unwrap();
    let lp = &plan.layers[0];
    assert_eq!(lp.labels, vec![Some(0), Some(1), Some(0)]);
    assert!((lp.weights[0] - 5.0 / 6.0).abs() < 1e-12);
    assert!((lp.weights[2] - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn freq_merge_recovers_planted_groups_when_anchors_split() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(14);
    let planted = init_planted(&cfg, 2, 0.0, &mut rng).unwrap();
    let t = trace_of(&planted.checkpoint, 15);
    // Under zero noise each group routes to its lowest member only, so the
    // two anchors are the groups' first experts.
    let plan = freq_merge_plan(&t, &planted.checkpoint, 2, &ReduceOptions::default()).unwrap();
    for (i, lp) in plan.layers.iter().enumerate() {
        let anchors_groups: Vec<usize> = lp.references.iter().map(|&r| planted.labels[i][r]).collect();
        assert_ne!(anchors_groups[0], anchors_groups[1]);
        assert_eq!(adjusted_rand_index(&lp.cluster_labels(), &planted.labels[i]), 1.0);
    }
}

#[test]
fn global_merge_averages_the_target() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(16);
    let ck = init_random(&cfg, &mut rng).unwrap();
    let t = trace_of(&ck, 17);
    let plan = global_merge_plan(&t, &ck, 3, &ReduceOptions::default()).unwrap();
    let total: usize = plan.layers.iter().map(|l| l.n_clusters).sum();
    assert_eq!(total, 6);
    let out = apply_plan(&ck, &plan, &mut rng).unwrap();
    assert_eq!(out.config.n_experts, 3);
    let counts: Vec<usize> = out.config.moe_layers().map(|(_, z)| z).collect();
    assert_eq!(counts.iter().sum::<usize>(), 6);
    assert!(global_merge_plan(&t, &ck, 9, &ReduceOptions::default()).is_err());
    let round = moe_reduce::ckpt::to_bytes(&out).unwrap();
    let (back, _) = moe_reduce::ckpt::from_bytes(&round).unwrap();
    assert_eq!(back, out);
}

#[test]
fn degenerate_columns_error_unless_allowed() {
    let cfg = tiny_config(4);
    let mut rng = Rng::new(18);
    let mut ck = init_random(&cfg, &mut rng).unwrap();
    for l in [0, 2] {
        let w = &mut ck.moe_layer_mut(l).unwrap().router.w;
        for r in 0..w.rows() {
            w.row_mut(r)[3] = 0.0;
        }
    }
    let t = trace_of(&ck, 19);
    let err = uncurl_plan(&t, &ck, 2, &ReduceOptions::default(), &mut rng).unwrap_err();
    assert!(matches!(err, Error::DegenerateColumn { layer: Some(0), expert: 3 }));
    assert!(freq_merge_plan(&t, &ck, 2, &ReduceOptions::default()).is_err());
    let allow = ReduceOptions {
        allow_degenerate: true,
        ..ReduceOptions::default()
    };
    let plan = uncurl_plan(&t, &ck, 2, &allow, &mut rng).unwrap();
    for lp in &plan.layers {
        assert!(lp.labels[3].is_some());
        assert_eq!(lp.weights[3], 0.0);
        lp.validate(4, cfg.d_ff).unwrap();
    }
    apply_plan(&ck, &plan, &mut rng).unwrap();
    freq_merge_plan(&t, &ck, 2, &allow).unwrap();

    // A zero router leaves nothing to cluster.
    for l in [0, 2] {
        ck.moe_layer_mut(l).unwrap().router.w.scale(0.0);
    }
    let t = trace_of(&ck, 20);
    assert!(matches!(
        uncurl_plan(&t, &ck, 2, &ReduceOptions::default(), &mut rng),
        Err(Error::DegenerateColumn { .. })
    ));
    assert!(uncurl_plan(&t, &ck, 2, &allow, &mut rng).is_err());
}

#[test]
fn skip_first_moe_leaves_that_layer_alone() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(21);
    let planted = init_planted(&cfg, 2, 0.0, &mut rng).unwrap();
    let t = trace_of(&planted.checkpoint, 22);
    let opts = ReduceOptions {
        skip_first_moe: true,
        ..ReduceOptions::default()
    };
    for method in [Method::Uncurl, Method::FreqPrune, Method::FreqMerge, Method::GlobalMerge] {
        let plan = reduce::plan(method, &t, &planted.checkpoint, 2, &opts, &mut rng).unwrap();
        assert_eq!(plan.layers[0].method, Method::Identity);
        let out = apply_plan(&planted.checkpoint, &plan, &mut rng).unwrap();
        assert_eq!(out.config.expert_counts, Some(vec![8, 2]), "{method:?}");
        assert_eq!(out.moe_layer(0), planted.checkpoint.moe_layer(0));
    }
}

#[test]
fn export_round_trips_embeddings_and_labels() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(23);
    let planted = init_planted(&cfg, 2, 0.01, &mut rng).unwrap();
    let t = trace_of(&planted.checkpoint, 24);
    let (plan, report) = uncurl_plan_with_report(&t, &planted.checkpoint, 2, &ReduceOptions::default(), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = export_clusters(&report, &plan, dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    for (path, lr) in paths.iter().zip(&report.layers) {
        let mut rd = csv::Reader::from_path(path).unwrap();
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, ["expert", "f0", "f1", "label", "frequency"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 8);
        let lp = plan.layer(lr.layer).unwrap();
        for (e, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), 5);
            assert_eq!(row[0].parse::<usize>().unwrap(), e);
            for k in 0..2 {
                let v: f64 = row[1 + k].parse().unwrap();
                assert!((v - lr.embedding[(e, k)]).abs() <= 1e-6);
            }
            assert_eq!(Some(row[3].parse::<usize>().unwrap()), lp.labels[e]);
        }
        // Similarity report invariants.
        let s = &lr.similarity;
        for i in 0..8 {
            assert_eq!(s[(i, i)], 1.0);
            for j in 0..8 {
                assert_eq!(s[(i, j)], s[(j, i)]);
                assert!((0.0..=1.0).contains(&s[(i, j)]));
            }
        }
    }
    let bad = tempfile::NamedTempFile::new().unwrap();
    let err = export_clusters(&report, &plan, bad.path()).unwrap_err();
    assert_eq!(err.category(), "io");
}

#[test]
fn plan_json_round_trips_and_replays() {
    let cfg = tiny_config(8);
    let mut rng = Rng::new(25);
    let planted = init_planted(&cfg, 2, 0.01, &mut rng).unwrap();
    let t = trace_of(&planted.checkpoint, 26);
    let plan = freq_merge_plan(&t, &planted.checkpoint, 3, &ReduceOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    plan.save(&path).unwrap();
    let back = MergePlan::load(&path).unwrap();
    assert_eq!(back, plan);
    let a = apply_plan(&planted.checkpoint, &plan, &mut Rng::new(1)).unwrap();
    let b = apply_plan(&planted.checkpoint, &back, &mut Rng::new(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn alignment_preserves_function_on_random_pairs() {
    let mut rng = Rng::new(27);
    for _ in 0..20 {
        let a = common::random_expert(8, 24, &mut rng);
        let b = common::random_expert(8, 24, &mut rng);
        let (perm, aligned) = align_experts(&a, &b).unwrap();
        assert_eq!(aligned, b.permute_hidden(&perm).unwrap());
        assert!(expert_gap(&aligned, &b, 20, &mut rng) < 1e-12);
    }
}

fn random_similarity(n: usize, rng: &mut Rng) -> Matrix {
    let h = Matrix::from_fn(12, n, |_, _| rng.normal());
    let c = moe_reduce::numerics::cosine_columns(&h).unwrap();
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (1.0 + c[(i, j)]) / 2.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn laplacian_spectrum_lies_in_zero_two(n in 2usize..16, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let s = random_similarity(n, &mut rng);
        let e = spectral_embed(&s, n).unwrap();
        for &v in &e.eigenvalues {
            prop_assert!((-1e-10..=2.0 + 1e-10).contains(&v));
        }
        prop_assert!(e.eigenvalues[0].abs() < 1e-10);
        for i in 0..n {
            if !e.zero_rows.contains(&i) {
                let len: f64 = e.embedding.row(i).iter().map(|v| v * v).sum();
                prop_assert!((len - 1.0).abs() < 1e-12);
            }
        }
        // Spectrum agrees with a direct eigen-decomposition.
        let deg: Vec<f64> = (0..n).map(|i| s.row(i).iter().sum()).collect();
        let l = Matrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - s[(i, j)] / (deg[i] * deg[j]).sqrt());
        let direct = sym_eigen(&l, n).unwrap();
        for (a, b) in direct.values.iter().zip(&e.eigenvalues) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn merge_weights_are_convex(seed in any::<u64>(), d in 1usize..8, method_ix in 0usize..3) {
        let cfg = tiny_config(8);
        let mut rng = Rng::new(seed);
        let planted = init_planted(&cfg, 2, 0.01, &mut rng).unwrap();
        let stream = tokens::random_stream(64, 256, &mut rng);
        let t = harvest(&planted.checkpoint, &stream, 2, 32, 128).unwrap();
        let method = [Method::Uncurl, Method::FreqMerge, Method::GlobalMerge][method_ix];
        let plan = reduce::plan(method, &t, &planted.checkpoint, d, &ReduceOptions::default(), &mut rng).unwrap();
        for lp in &plan.layers {
            prop_assert!(lp.weights.iter().all(|&w| w >= 0.0));
            for c in 0..lp.n_clusters {
                let s: f64 = lp.members(c).iter().map(|&e| lp.weights[e]).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
            if method != Method::GlobalMerge {
                prop_assert_eq!(lp.n_clusters, d);
            }
        }
    }

    #[test]
    fn global_budget_is_exact(
        counts in prop::collection::vec(prop::collection::vec(0u64..20, 6), 1..5),
        d_avg in 1usize..7,
    ) {
        let refs: Vec<&[u64]> = counts.iter().map(Vec::as_slice).collect();
        let sizes = vec![6; counts.len()];
        let anchors = reduce::global_anchors(&refs, &sizes, d_avg).unwrap();
        let total: usize = anchors.iter().map(Vec::len).sum();
        prop_assert_eq!(total, d_avg * counts.len());
        prop_assert!(anchors.iter().all(|a| !a.is_empty()));
        for a in &anchors {
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
