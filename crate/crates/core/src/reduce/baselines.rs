use super::align::align_experts;
use super::plan::{frequency_weights, rank_by_count, Cluster, LayerPlan, MergePlan, Method, RouterDisposition};
use super::spectral::similarity_masked;
use super::uncurl::nearest_reference;
use super::{check_trace_shape, ReduceOptions};
use crate::error::{Error, Result};
use crate::model::SmoeCheckpoint;
use crate::numerics::Assignment;
use crate::trace::RouterTrace;

fn check_target(layer: usize, d: usize, z: usize) -> Result<()> {
    if d == 0 || d > z {
        return Err(Error::validation(format!(
            "target {d} out of range 1..={z} for layer {layer}"
        )));
    }
    Ok(())
}

fn skipped(opts: &ReduceOptions, ckpt: &SmoeCheckpoint, layer: usize) -> Option<LayerPlan> {
    let first = ckpt.config.moe_layer_indices.first().copied();
    (opts.skip_first_moe && Some(layer) == first).then(|| {
        LayerPlan::identity(layer, ckpt.config.experts_in_layer(layer), ckpt.config.d_ff)
    })
}

/// Keeps the `d` most frequently selected experts of every layer and
/// discards the rest.
pub fn freq_prune_plan(
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    d: usize,
    opts: &ReduceOptions,
) -> Result<MergePlan> {
    check_trace_shape(trace, ckpt)?;
    let d_ff = ckpt.config.d_ff;
    let mut layers = Vec::new();
    for (layer, z) in ckpt.config.moe_layers() {
        if let Some(p) = skipped(opts, ckpt, layer) {
            layers.push(p);
            continue;
        }
        check_target(layer, d, z)?;
        let counts = &trace.layer(layer)?.counts;
        let mut kept = rank_by_count(counts)[..d].to_vec();
        kept.sort_unstable();
        let clusters = kept
            .into_iter()
            .map(|e| Cluster {
                reference: e,
                members: vec![e],
                weights: vec![1.0],
                permutations: vec![Assignment::identity(d_ff)],
            })
            .collect();
        let mut plan = LayerPlan::from_clusters(layer, Method::FreqPrune, z, clusters, RouterDisposition::KeepColumns);
        if let Some(r) = opts.router {
            plan.router = r;
        }
        layers.push(plan);
    }
    Ok(MergePlan {
        method: Method::FreqPrune,
        target: d,
        layers,
    })
}

/// Uses the `d` most frequent experts as anchors and merges every other
/// expert into its most similar anchor.
pub fn freq_merge_plan(
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    d: usize,
    opts: &ReduceOptions,
) -> Result<MergePlan> {
    check_trace_shape(trace, ckpt)?;
    let mut layers = Vec::new();
    for (layer, z) in ckpt.config.moe_layers() {
        if let Some(p) = skipped(opts, ckpt, layer) {
            layers.push(p);
            continue;
        }
        check_target(layer, d, z)?;
        let anchors = rank_by_count(&trace.layer(layer)?.counts)[..d].to_vec();
        layers.push(anchor_merge(trace, ckpt, layer, Method::FreqMerge, &anchors, opts)?);
    }
    Ok(MergePlan {
        method: Method::FreqMerge,
        target: d,
        layers,
    })
}

/// Picks the globally most frequent (layer, expert) pairs as anchors,
/// `d_avg` per layer on average, and merges within each layer.
pub fn global_merge_plan(
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    d_avg: usize,
    opts: &ReduceOptions,
) -> Result<MergePlan> {
    check_trace_shape(trace, ckpt)?;
    let first = ckpt.config.moe_layer_indices.first().copied();
    let layers: Vec<(usize, usize)> = ckpt
        .config
        .moe_layers()
        .filter(|&(l, _)| !(opts.skip_first_moe && Some(l) == first))
        .collect();
    let counts: Vec<&[u64]> = layers
        .iter()
        .map(|&(l, _)| trace.layer(l).map(|t| t.counts.as_slice()))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = layers.iter().map(|&(_, z)| z).collect();
    let anchors = global_anchors(&counts, &sizes, d_avg)?;

    let mut plans = Vec::new();
    for (layer, z) in ckpt.config.moe_layers() {
        match layers.iter().position(|&(l, _)| l == layer) {
            None => plans.push(LayerPlan::identity(layer, z, ckpt.config.d_ff)),
            Some(i) => plans.push(anchor_merge(trace, ckpt, layer, Method::GlobalMerge, &anchors[i], opts)?),
        }
    }
    Ok(MergePlan {
        method: Method::GlobalMerge,
        target: d_avg,
        layers: plans,
    })
}

/// Global dominant-expert selection. `counts[i]` are the selection counts
/// of layer `i`; returns the anchors of each layer in ascending order.
///
/// Pairs are ranked by count descending, then expert index, then layer.
/// Layers left without an anchor promote their local top expert, paid for
/// by dropping the lowest-ranked anchor of a layer that has more than one.
pub fn global_anchors(counts: &[&[u64]], sizes: &[usize], d_avg: usize) -> Result<Vec<Vec<usize>>> {
    let n_layers = counts.len();
    let total: usize = sizes.iter().sum();
    let budget = d_avg * n_layers;
    if d_avg == 0 || budget > total {
        return Err(Error::validation(format!(
            "average target {d_avg} over {n_layers} layers needs {budget} experts, {total} available"
        )));
    }
    let mut ranked: Vec<(usize, usize)> = (0..n_layers)
        .flat_map(|l| (0..sizes[l]).map(move |e| (l, e)))
        .collect();
    ranked.sort_by(|&(la, ea), &(lb, eb)| {
        counts[lb][eb]
            .cmp(&counts[la][ea])
            .then(ea.cmp(&eb))
            .then(la.cmp(&lb))
    });
    let mut dominant: Vec<(usize, usize)> = ranked[..budget].to_vec();
    let mut per_layer = vec![0usize; n_layers];
    dominant.iter().for_each(|&(l, _)| per_layer[l] += 1);
    for l in 0..n_layers {
        if per_layer[l] > 0 {
            continue;
        }
        let drop = dominant
            .iter()
            .rposition(|&(ol, _)| per_layer[ol] > 1)
            .expect("budget covers every layer");
        per_layer[dominant[drop].0] -= 1;
        dominant.remove(drop);
        let top = rank_by_count(counts[l])[0];
        dominant.push((l, top));
        per_layer[l] += 1;
    }
    let mut anchors = vec![Vec::new(); n_layers];
    for (l, e) in dominant {
        anchors[l].push(e);
    }
    anchors.iter_mut().for_each(|a| a.sort_unstable());
    Ok(anchors)
}

fn anchor_merge(
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    layer: usize,
    method: Method,
    anchors: &[usize],
    opts: &ReduceOptions,
) -> Result<LayerPlan> {
    let t = trace.layer(layer)?;
    let experts = &ckpt.moe_layer(layer).expect("checked moe layer").experts;
    let z = experts.len();
    let (s, active, degenerate) = similarity_masked(&t.logits).map_err(|e| e.with_layer(layer))?;
    if let Some(&expert) = degenerate.first() {
        if !opts.allow_degenerate {
            return Err(Error::DegenerateColumn {
                layer: Some(layer),
                expert,
            });
        }
    }
    let pos = |e: usize| active.iter().position(|&a| a == e);
    let mut members: Vec<Vec<usize>> = anchors.iter().map(|&a| vec![a]).collect();
    let mut perms: Vec<Vec<Assignment>> = anchors
        .iter()
        .map(|_| vec![Assignment::identity(ckpt.config.d_ff)])
        .collect();
    for e in (0..z).filter(|e| !anchors.contains(e)) {
        let by_similarity = pos(e).and_then(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (c, &a) in anchors.iter().enumerate() {
                if let Some(j) = pos(a) {
                    if best.is_none_or(|b| s[(i, j)] > b.1) {
                        best = Some((c, s[(i, j)]));
                    }
                }
            }
            best.map(|b| b.0)
        });
        let (c, perm) = match by_similarity {
            Some(c) => (c, align_experts(&experts[anchors[c]], &experts[e])?.0),
            None => nearest_reference(&experts[e], experts, anchors)?,
        };
        members[c].push(e);
        perms[c].push(perm);
    }
    let mut eligible = vec![true; z];
    degenerate.iter().for_each(|&e| eligible[e] = false);
    let clusters = members
        .into_iter()
        .zip(perms)
        .zip(anchors)
        .map(|((members, permutations), &reference)| Cluster {
            weights: frequency_weights(&t.counts, &members, &eligible),
            reference,
            members,
            permutations,
        })
        .collect();
    let mut plan = LayerPlan::from_clusters(layer, method, z, clusters, RouterDisposition::KeepColumns);
    if let Some(r) = opts.router {
        plan.router = r;
    }
    Ok(plan)
}
