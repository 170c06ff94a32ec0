//! Closed-form latency model for expert-parallel inference.
//!
//! Each MoE layer costs the expert compute of its busiest GPU plus two
//! All2All collectives (dispatch and combine). Experts are placed
//! round-robin: expert `i` lives on GPU `i % ep`. Dense layers cost
//! compute only.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ffn_flops_per_layer, ModelConfig};
use crate::trace::RouterTrace;

fn default_bytes() -> u64 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyParams {
    pub n_gpus: usize,
    pub expert_parallel_degree: usize,
    pub batch_per_gpu: usize,
    pub seq_len: usize,
    pub flops_per_sec_per_gpu: f64,
    pub interconnect_bandwidth_bytes_per_sec: f64,
    pub all2all_latency_floor_sec: f64,
    #[serde(default = "default_bytes")]
    pub bytes_per_activation: u64,
}

impl Default for LatencyParams {
    /// Eight accelerators in one expert-parallel group.
    fn default() -> Self {
        LatencyParams {
            n_gpus: 8,
            expert_parallel_degree: 8,
            batch_per_gpu: 8,
            seq_len: 1024,
            flops_per_sec_per_gpu: 125e12,
            interconnect_bandwidth_bytes_per_sec: 25e9,
            all2all_latency_floor_sec: 50e-6,
            bytes_per_activation: 2,
        }
    }
}

impl LatencyParams {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Total tokens in flight per step.
    pub fn tokens(&self) -> f64 {
        (self.n_gpus * self.batch_per_gpu * self.seq_len) as f64
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        let ep = self.expert_parallel_degree;
        if self.n_gpus == 0 || ep == 0 || self.batch_per_gpu == 0 || self.seq_len == 0 {
            return fail("gpu count, parallel degree, batch and sequence length must be positive".into());
        }
        if ep > self.n_gpus || !self.n_gpus.is_multiple_of(ep) {
            return fail(format!(
                "expert-parallel degree {ep} must divide the gpu count {}",
                self.n_gpus
            ));
        }
        for (layer, m) in cfg.moe_layers() {
            if m % ep != 0 {
                return fail(format!(
                    "expert-parallel degree {ep} does not divide the {m} experts of layer {layer}"
                ));
            }
        }
        for (name, v) in [
            ("flops_per_sec_per_gpu", self.flops_per_sec_per_gpu),
            ("interconnect_bandwidth_bytes_per_sec", self.interconnect_bandwidth_bytes_per_sec),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.all2all_latency_floor_sec.is_finite() && self.all2all_latency_floor_sec >= 0.0) {
            return fail("all2all_latency_floor_sec must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Routing<'a> {
    Uniform,
    /// Expert loads follow the per-layer dispatch counts of a trace.
    Observed(&'a RouterTrace),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerLatency {
    pub layer: usize,
    pub moe: bool,
    pub expert_compute_sec: f64,
    pub all2all_sec: f64,
    pub total_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub layers: Vec<LayerLatency>,
    pub expert_compute_sec: f64,
    pub all2all_sec: f64,
    pub total_sec: f64,
    pub all2all_fraction: f64,
}

/// Largest per-GPU token load of one MoE layer.
fn max_gpu_load(tokens: f64, ep: usize, freqs: Option<&[f64]>) -> f64 {
    match freqs {
        None => tokens / ep as f64,
        Some(f) => {
            let mut share = vec![0.0; ep];
            for (i, &p) in f.iter().enumerate() {
                share[i % ep] += p;
            }
            tokens * share.into_iter().fold(0.0, f64::max)
        }
    }
}

pub fn simulate(cfg: &ModelConfig, params: &LatencyParams, routing: Routing<'_>) -> Result<LatencyReport> {
    cfg.validate()?;
    params.validate(cfg)?;
    if let Routing::Observed(trace) = routing {
        let ids = trace.layer_ids();
        if ids != cfg.moe_layer_indices {
            return Err(Error::Validation(format!(
                "trace covers layers {ids:?}, config MoE layers are {:?}",
                cfg.moe_layer_indices
            )));
        }
    }
    let ep = params.expert_parallel_degree;
    let tokens = params.tokens();
    let per_token = ffn_flops_per_layer(cfg) as f64 * cfg.top_k as f64;
    let flops_rate = params.flops_per_sec_per_gpu;
    let token_bytes = cfg.d_model as f64 * params.bytes_per_activation as f64;
    let cross = (ep - 1) as f64 / ep as f64;

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        if !cfg.is_moe_layer(layer) {
            let local = (params.batch_per_gpu * params.seq_len) as f64;
            let compute = local * ffn_flops_per_layer(cfg) as f64 / flops_rate;
            layers.push(LayerLatency {
                layer,
                moe: false,
                expert_compute_sec: compute,
                all2all_sec: 0.0,
                total_sec: compute,
            });
            continue;
        }
        let freqs = match routing {
            Routing::Uniform => None,
            Routing::Observed(trace) => {
                let t = trace.layer(layer)?;
                let m = cfg.experts_in_layer(layer);
                if t.n_experts() != m {
                    return Err(Error::Validation(format!(
                        "trace layer {layer} has {} experts, config has {m}",
                        t.n_experts()
                    )));
                }
                let f = crate::trace::normalize_counts(&t.counts);
                (!f.degenerate).then_some(f.values)
            }
        };
        let load = max_gpu_load(tokens, ep, freqs.as_deref());
        let compute = load * per_token / flops_rate;
        let volume = load * cross;
        let all2all = 2.0
            * (params.all2all_latency_floor_sec
                + volume * token_bytes / params.interconnect_bandwidth_bytes_per_sec);
        layers.push(LayerLatency {
            layer,
            moe: true,
            expert_compute_sec: compute,
            all2all_sec: all2all,
            total_sec: compute + all2all,
        });
    }
    let expert_compute_sec: f64 = layers.iter().map(|l| l.expert_compute_sec).sum();
    let all2all_sec: f64 = layers.iter().map(|l| l.all2all_sec).sum();
    let total_sec: f64 = layers.iter().map(|l| l.total_sec).sum();
    Ok(LatencyReport {
        layers,
        expert_compute_sec,
        all2all_sec,
        total_sec,
        all2all_fraction: if total_sec > 0.0 { all2all_sec / total_sec } else { 0.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Experts,
    Gpus,
    Batch,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "experts" => Ok(Axis::Experts),
            "gpus" => Ok(Axis::Gpus),
            "batch" => Ok(Axis::Batch),
            other => Err(Error::validation(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: usize,
    pub report: LatencyReport,
}

/// Evaluates [`simulate`] under uniform routing at each axis value.
pub fn sweep(cfg: &ModelConfig, params: &LatencyParams, axis: Axis, values: &[usize]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            if v == 0 {
                return Err(Error::validation(format!("sweep value must be positive, got {v}")));
            }
            let mut c = cfg.clone();
            let mut p = params.clone();
            match axis {
                Axis::Experts => {
                    c.n_experts = v;
                    c.expert_counts = None;
                }
                Axis::Gpus => p.n_gpus = v,
                Axis::Batch => p.batch_per_gpu = v,
            }
            Ok(SweepRow {
                axis_value: v,
                report: simulate(&c, &p, Routing::Uniform)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let to_err = |e: csv::Error| Error::Format(format!("writing sweep csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis_value", "expert_compute_sec", "all2all_sec", "total_sec", "all2all_fraction"])
        .map_err(to_err)?;
    for r in rows {
        w.write_record([
            r.axis_value.to_string(),
            r.report.expert_compute_sec.to_string(),
            r.report.all2all_sec.to_string(),
            r.report.total_sec.to_string(),
            r.report.all2all_fraction.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing sweep csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: usize) -> ModelConfig {
        ModelConfig::gpt2_medium(m)
    }

    #[test]
    fn single_gpu_group_has_no_volume() {
        let p = LatencyParams {
            expert_parallel_degree: 1,
            ..LatencyParams::default()
        };
        let r = simulate(&cfg(8), &p, Routing::Uniform).unwrap();
        for l in r.layers.iter().filter(|l| l.moe) {
            assert_eq!(l.all2all_sec, 2.0 * p.all2all_latency_floor_sec);
        }
    }

    #[test]
    fn totals_are_sums_of_parts() {
        let r = simulate(&cfg(16), &LatencyParams::default(), Routing::Uniform).unwrap();
        let total: f64 = r.layers.iter().map(|l| l.total_sec).sum();
        let compute: f64 = r.layers.iter().map(|l| l.expert_compute_sec).sum();
        assert_eq!(r.total_sec, total);
        assert_eq!(r.expert_compute_sec, compute);
        assert!((r.expert_compute_sec + r.all2all_sec - r.total_sec).abs() <= 1e-12 * r.total_sec);
    }

    #[test]
    fn bad_parallel_degree_is_rejected() {
        let p = LatencyParams {
            expert_parallel_degree: 3,
            n_gpus: 6,
            ..LatencyParams::default()
        };
        assert!(simulate(&cfg(8), &p, Routing::Uniform).is_err());
        let p = LatencyParams {
            expert_parallel_degree: 16,
            ..LatencyParams::default()
        };
        assert!(simulate(&cfg(16), &p, Routing::Uniform).is_err());
    }

    #[test]
    fn csv_has_one_row_per_value() {
        let rows = sweep(&cfg(8), &LatencyParams::default(), Axis::Experts, &[8, 16]).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("axis_value,expert_compute_sec"));
    }
}
