use super::plan::{MergePlan, RouterDisposition};
use crate::error::{Error, Result};
use crate::model::{ExpertWeights, MoeLayer, RouterWeights, SmoeCheckpoint, INIT_STD};
use crate::numerics::{Matrix, Rng};

/// Applies a plan: every cluster becomes the weighted average of its
/// aligned members. Routers are redrawn in MoE-layer order from `rng`
/// for layers marked [`RouterDisposition::Reinitialize`].
pub fn apply_plan(ckpt: &SmoeCheckpoint, plan: &MergePlan, rng: &mut Rng) -> Result<SmoeCheckpoint> {
    let cfg = &ckpt.config;
    let moe: Vec<usize> = cfg.moe_layer_indices.clone();
    let planned: Vec<usize> = plan.layers.iter().map(|l| l.layer).collect();
    if planned != moe {
        return Err(Error::Validation(format!(
            "plan covers layers {planned:?}, checkpoint MoE layers are {moe:?}"
        )));
    }
    let mut out = ckpt.clone();
    let mut counts = Vec::with_capacity(moe.len());
    for lp in &plan.layers {
        let layer = ckpt.moe_layer(lp.layer).expect("checked moe layer");
        lp.validate(layer.experts.len(), cfg.d_ff)?;
        let mut experts = Vec::with_capacity(lp.n_clusters);
        for c in 0..lp.n_clusters {
            let mut merged = ExpertWeights::zeros(cfg.d_model, cfg.d_ff);
            for e in lp.members(c) {
                let w = lp.weights[e];
                if w == 0.0 {
                    continue;
                }
                let perm = lp.permutations[e].as_ref().expect("validated member");
                merged.add_scaled(&layer.experts[e].permute_hidden(perm)?, w);
            }
            experts.push(merged);
        }
        let router = match lp.router {
            RouterDisposition::KeepColumns => layer.router.keep_columns(&lp.references),
            RouterDisposition::Reinitialize => RouterWeights {
                w: Matrix::from_fn(cfg.d_model, lp.n_clusters, |_, _| rng.gaussian(INIT_STD)),
            },
        };
        counts.push(lp.n_clusters);
        *out.moe_layer_mut(lp.layer).expect("checked moe layer") = MoeLayer { router, experts };
    }
    if !counts.is_empty() {
        let total: usize = counts.iter().sum();
        out.config.n_experts = (total as f64 / counts.len() as f64).round() as usize;
        out.config.expert_counts = if counts.iter().all(|&c| c == counts[0]) {
            None
        } else {
            Some(counts)
        };
    }
    out.round_to_f32();
    out.validate()?;
    Ok(out)
}
