use rayon::prelude::*;

use super::align::{align_experts, weight_similarity};
use super::plan::{frequency_weights, most_frequent, Cluster, LayerPlan, MergePlan, Method, RouterDisposition};
use super::spectral::{similarity_masked, spectral_embed};
use super::{check_trace_shape, ReduceOptions};
use crate::error::{Error, Result};
use crate::model::{ExpertWeights, SmoeCheckpoint};
use crate::numerics::{kmeans, Assignment, Matrix, Rng, DEFAULT_MAX_ITERS};
use crate::trace::{RouterTrace, TraceLayer};

/// Per-layer intermediate results of the spectral clustering.
#[derive(Clone, Debug)]
pub struct LayerReport {
    pub layer: usize,
    /// Rescaled similarity, Z×Z. Pairs involving a degenerate expert are 0.5.
    pub similarity: Matrix,
    /// Row-normalized eigenvectors, Z×D. Degenerate experts get zero rows.
    pub embedding: Matrix,
    pub eigenvalues: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub degenerate: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct SimilarityReport {
    pub layers: Vec<LayerReport>,
}

impl SimilarityReport {
    pub fn layer(&self, layer: usize) -> Option<&LayerReport> {
        self.layers.iter().find(|l| l.layer == layer)
    }
}

/// Clusters every MoE layer's experts by router-logit similarity and merges
/// each cluster into one expert.
pub fn uncurl_plan(
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    d: usize,
    opts: &ReduceOptions,
    rng: &mut Rng,
) -> Result<MergePlan> {
    uncurl_plan_with_report(trace, ckpt, d, opts, rng).map(|(plan, _)| plan)
}

pub fn uncurl_plan_with_report(
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    d: usize,
    opts: &ReduceOptions,
    rng: &mut Rng,
) -> Result<(MergePlan, SimilarityReport)> {
    check_trace_shape(trace, ckpt)?;
    let layers: Vec<(usize, &TraceLayer, &[ExpertWeights])> = ckpt
        .config
        .moe_layer_indices
        .iter()
        .map(|&l| {
            let experts = &ckpt.moe_layer(l).expect("checked moe layer").experts;
            Ok((l, trace.layer(l)?, experts.as_slice()))
        })
        .collect::<Result<_>>()?;
    // One generator per layer, drawn in layer order so results do not
    // depend on thread scheduling.
    let rngs: Vec<Rng> = layers.iter().map(|_| rng.split()).collect();
    let first = ckpt.config.moe_layer_indices.first().copied();
    let results: Vec<(LayerPlan, Option<LayerReport>)> = layers
        .into_par_iter()
        .zip(rngs)
        .map(|((layer, t, experts), mut rng)| {
            if opts.skip_first_moe && Some(layer) == first {
                let d_ff = experts[0].d_ff();
                return Ok((LayerPlan::identity(layer, experts.len(), d_ff), None));
            }
            let (mut plan, report) = uncurl_layer(layer, t, experts, d, opts.allow_degenerate, &mut rng)?;
            if let Some(r) = opts.router {
                plan.router = r;
            }
            Ok((plan, Some(report)))
        })
        .collect::<Result<_>>()?;
    let (plans, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((
        MergePlan {
            method: Method::Uncurl,
            target: d,
            layers: plans,
        },
        SimilarityReport {
            layers: reports.into_iter().flatten().collect(),
        },
    ))
}

fn uncurl_layer(
    layer: usize,
    trace: &TraceLayer,
    experts: &[ExpertWeights],
    d: usize,
    allow_degenerate: bool,
    rng: &mut Rng,
) -> Result<(LayerPlan, LayerReport)> {
    let z = experts.len();
    let counts = &trace.counts;
    if d == 0 || d > z {
        return Err(Error::validation(format!(
            "target {d} out of range 1..={z} for layer {layer}"
        )));
    }
    let (s_active, active, degenerate) = similarity_masked(&trace.logits).map_err(|e| e.with_layer(layer))?;
    if let Some(&expert) = degenerate.first() {
        if !allow_degenerate {
            return Err(Error::DegenerateColumn {
                layer: Some(layer),
                expert,
            });
        }
    }
    if d > active.len() {
        return Err(Error::validation(format!(
            "layer {layer}: target {d} exceeds the {} experts with a routing signal",
            active.len()
        )));
    }
    let spectral = spectral_embed(&s_active, d)?;
    let km = kmeans(&spectral.embedding, d, rng, DEFAULT_MAX_ITERS)?;

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (i, &e) in active.iter().enumerate() {
        groups[km.labels[i]].push(e);
    }
    groups.retain(|g| !g.is_empty());
    let references: Vec<usize> = groups
        .iter()
        .map(|g| most_frequent(counts, g.iter().copied()).expect("non-empty group"))
        .collect();
    let mut aligned: Vec<Vec<Assignment>> = groups
        .iter()
        .zip(&references)
        .map(|(g, &r)| {
            g.iter()
                .map(|&e| align_experts(&experts[r], &experts[e]).map(|(p, _)| p))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    for &e in &degenerate {
        let (best, perm) = nearest_reference(&experts[e], experts, &references)?;
        groups[best].push(e);
        aligned[best].push(perm);
    }

    let mut eligible = vec![true; z];
    degenerate.iter().for_each(|&e| eligible[e] = false);
    let clusters = groups
        .into_iter()
        .zip(aligned)
        .zip(&references)
        .map(|((members, permutations), &reference)| Cluster {
            weights: frequency_weights(counts, &members, &eligible),
            reference,
            members,
            permutations,
        })
        .collect();
    let plan = LayerPlan::from_clusters(layer, Method::Uncurl, z, clusters, RouterDisposition::Reinitialize);

    let mut similarity = Matrix::from_fn(z, z, |i, j| if i == j { 1.0 } else { 0.5 });
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            similarity.row_mut(i)[j] = s_active[(a, b)];
        }
    }
    let mut embedding = Matrix::zeros(z, d);
    for (a, &i) in active.iter().enumerate() {
        embedding.row_mut(i).copy_from_slice(spectral.embedding.row(a));
    }
    let report = LayerReport {
        layer,
        similarity,
        embedding,
        eigenvalues: spectral.eigenvalues,
        frequencies: crate::trace::normalize_counts(counts).values,
        degenerate,
    };
    Ok((plan, report))
}

/// Cluster whose reference is closest in weight space to `expert` after
/// alignment. Returns the cluster index and the aligning permutation.
pub(crate) fn nearest_reference(
    expert: &ExpertWeights,
    experts: &[ExpertWeights],
    references: &[usize],
) -> Result<(usize, Assignment)> {
    let mut best: Option<(usize, Assignment, f64)> = None;
    for (c, &r) in references.iter().enumerate() {
        let (perm, aligned) = align_experts(&experts[r], expert)?;
        let score = weight_similarity(&experts[r], &aligned);
        if best.as_ref().is_none_or(|b| score > b.2) {
            best = Some((c, perm, score));
        }
    }
    let (c, perm, _) = best.expect("at least one cluster");
    Ok((c, perm))
}
