//! Expert reduction: plan construction (spectral clustering and the
//! frequency baselines) and plan application.

mod align;
mod apply;
mod baselines;
mod export;
mod plan;
mod spectral;
mod uncurl;

pub use align::{align_experts, alignment_cost};
pub use apply::apply_plan;
pub use baselines::{freq_merge_plan, freq_prune_plan, global_anchors, global_merge_plan};
pub use export::export_clusters;
pub use plan::{adjusted_rand_index, LayerPlan, MergePlan, Method, RouterDisposition};
pub use spectral::{similarity, spectral_embed, SpectralEmbedding};
pub use uncurl::{uncurl_plan, uncurl_plan_with_report, LayerReport, SimilarityReport};

use crate::error::{Error, Result};
use crate::model::SmoeCheckpoint;
use crate::numerics::Rng;
use crate::trace::RouterTrace;

#[derive(Clone, Copy, Debug, Default)]
pub struct ReduceOptions {
    /// Fold experts with an all-zero logit column into the nearest cluster
    /// with zero weight instead of failing.
    pub allow_degenerate: bool,
    /// Leave the first MoE layer untouched.
    pub skip_first_moe: bool,
    /// Override the method's default router disposition.
    pub router: Option<RouterDisposition>,
}

/// Builds a plan with any method. The generator is only consumed by
/// [`Method::Uncurl`].
pub fn plan(
    method: Method,
    trace: &RouterTrace,
    ckpt: &SmoeCheckpoint,
    target: usize,
    opts: &ReduceOptions,
    rng: &mut Rng,
) -> Result<MergePlan> {
    match method {
        Method::Uncurl => uncurl_plan(trace, ckpt, target, opts, rng),
        Method::FreqPrune => freq_prune_plan(trace, ckpt, target, opts),
        Method::FreqMerge => freq_merge_plan(trace, ckpt, target, opts),
        Method::GlobalMerge => global_merge_plan(trace, ckpt, target, opts),
        Method::Identity => Ok(MergePlan {
            method,
            target,
            layers: ckpt
                .config
                .moe_layers()
                .map(|(l, z)| LayerPlan::identity(l, z, ckpt.config.d_ff))
                .collect(),
        }),
    }
}

/// The trace must cover exactly the checkpoint's MoE layers with matching
/// expert counts.
pub(crate) fn check_trace_shape(trace: &RouterTrace, ckpt: &SmoeCheckpoint) -> Result<()> {
    let ids = trace.layer_ids();
    if ids != ckpt.config.moe_layer_indices {
        return Err(Error::Validation(format!(
            "trace covers layers {ids:?}, checkpoint MoE layers are {:?}",
            ckpt.config.moe_layer_indices
        )));
    }
    for (layer, z) in ckpt.config.moe_layers() {
        let t = trace.layer(layer)?;
        if t.n_experts() != z {
            return Err(Error::Validation(format!(
                "trace layer {layer} has {} experts, checkpoint has {z}",
                t.n_experts()
            )));
        }
    }
    Ok(())
}
