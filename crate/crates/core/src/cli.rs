//! Command-line front end. Every subcommand is deterministic given `--seed`.
//!
//! Failures print a single line `error: <category>: <detail>` to stderr and
//! exit nonzero.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ckpt;
use crate::error::{Error, Result};
use crate::latsim::{self, Axis, LatencyParams, Routing};
use crate::model::{self, ModelConfig, PlantedOptions};
use crate::numerics::Rng;
use crate::reduce::{self, Method, ReduceOptions, RouterDisposition};
use crate::tokens;
use crate::trace::{self, RouterTrace};

#[derive(Debug, Parser)]
#[command(name = "smoe", version, about = "Build, trace, reduce and cost toy sparse MoE models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random model from a config.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Planted-partition model with known expert groups.
    Synth(SynthArgs),
    /// Harvest router logits over a token stream.
    Trace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        seq: usize,
        #[arg(long, default_value_t = trace::DEFAULT_MAX_POSITIONS)]
        max_positions: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce every MoE layer to `--target` experts.
    Reduce(ReduceArgs),
    /// Parameter counts by component.
    Params {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Forward FLOPs per token by component.
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Expert-parallel latency model.
    Latency {
        #[arg(long)]
        config: PathBuf,
        /// LatencyParams JSON; built-in defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// `experts|gpus|batch=v1,v2,...`
        #[arg(long)]
        sweep: Option<String>,
        /// Use observed routing from this trace (single evaluation only).
        #[arg(long, conflicts_with = "sweep")]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean next-token negative log-likelihood over a token stream.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        seq: usize,
    },
    /// Per-layer spectral embeddings and cluster labels as CSV.
    ExportClusters {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        allow_degenerate: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Uniform random token stream in the `u32` little-endian format.
    GenTokens {
        #[arg(long)]
        vocab: usize,
        #[arg(long)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub groups: usize,
    /// Noise on member experts (and on router columns unless
    /// `--router-noise` is given).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub router_noise: Option<f64>,
    /// Bias routing toward this group.
    #[arg(long)]
    pub dominant_group: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub dominance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub target: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub skip_first_moe: bool,
    #[arg(long)]
    pub allow_degenerate: bool,
    /// Override the method's router disposition.
    #[arg(long, value_parser = parse_router)]
    pub router: Option<RouterDisposition>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_router(s: &str) -> std::result::Result<RouterDisposition, String> {
    match s {
        "keep-columns" | "keep" => Ok(RouterDisposition::KeepColumns),
        "reinitialize" | "reinit" => Ok(RouterDisposition::Reinitialize),
        other => Err(format!("unknown router disposition {other:?}")),
    }
}

#[derive(Serialize)]
struct LayerLabels<'a> {
    layer: usize,
    labels: &'a [usize],
}

#[derive(Serialize)]
struct LabelsFile<'a> {
    groups: usize,
    layers: Vec<LayerLabels<'a>>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {line}");
            return 2;
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn write_out(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_pair(model: &Path, trace_path: &Path) -> Result<(model::SmoeCheckpoint, RouterTrace)> {
    let (ckpt, digest) = ckpt::load_with_digest(model)?;
    let trace = RouterTrace::load(trace_path)?;
    trace.check_digest(&digest)?;
    Ok((ckpt, trace))
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Init { config, seed, out: path } => {
            let cfg = ModelConfig::load(config)?;
            let ckpt = model::init_random(&cfg, &mut Rng::new(*seed))?;
            let digest = ckpt::save(&ckpt, path)?;
            write_out(out, format_args!("{} {}", path.display(), digest))
        }
        Command::Synth(a) => {
            let cfg = ModelConfig::load(&a.config)?;
            let opts = PlantedOptions {
                n_groups: a.groups,
                expert_noise: a.noise,
                router_noise: a.router_noise.unwrap_or(a.noise),
                dominant_group: a.dominant_group,
                dominance: a.dominance,
            };
            let planted = model::init_planted_with(&cfg, &opts, &mut Rng::new(a.seed))?;
            let digest = ckpt::save(&planted.checkpoint, &a.out)?;
            if let Some(path) = &a.labels {
                let layers = cfg
                    .moe_layer_indices
                    .iter()
                    .zip(&planted.labels)
                    .map(|(&layer, labels)| LayerLabels { layer, labels })
                    .collect();
                write_json(path, &LabelsFile { groups: a.groups, layers })?;
            }
            write_out(out, format_args!("{} {}", a.out.display(), digest))
        }
        Command::Trace {
            model,
            data,
            batch,
            seq,
            max_positions,
            out: path,
        } => {
            let ckpt = ckpt::load(model)?;
            let stream = tokens::read_stream(data)?;
            let t = trace::harvest(&ckpt, &stream, *batch, *seq, *max_positions)?;
            t.save(path)?;
            for l in &t.layers {
                write_out(
                    out,
                    format_args!("layer {} positions {} dropped {}", l.layer, t.n_positions, l.dropped),
                )?;
            }
            Ok(())
        }
        Command::Reduce(a) => {
            let (ckpt, trace) = load_pair(&a.model, &a.trace)?;
            let opts = ReduceOptions {
                allow_degenerate: a.allow_degenerate,
                skip_first_moe: a.skip_first_moe,
                router: a.router,
            };
            let mut rng = Rng::new(a.seed);
            let plan = reduce::plan(a.method, &trace, &ckpt, a.target, &opts, &mut rng)?;
            let reduced = reduce::apply_plan(&ckpt, &plan, &mut rng)?;
            if let Some(path) = &a.plan {
                plan.save(path)?;
            }
            let digest = ckpt::save(&reduced, &a.out)?;
            let counts: Vec<usize> = reduced.config.moe_layers().map(|(_, z)| z).collect();
            write_out(
                out,
                format_args!("{} {} experts per layer {:?}", a.out.display(), digest, counts),
            )
        }
        Command::Params { config, json } => {
            let p = model::param_count(&ModelConfig::load(config)?);
            if *json {
                return write_out(out, serde_json::to_string_pretty(&p).expect("serializes"));
            }
            for (name, v) in [
                ("embedding", p.embedding),
                ("attention", p.attention),
                ("layernorm", p.layernorm),
                ("dense_ffn", p.dense_ffn),
                ("experts", p.experts),
                ("routers", p.routers),
                ("total", p.total),
            ] {
                write_out(out, format_args!("{name:<10} {v:>15}"))?;
            }
            Ok(())
        }
        Command::Flops { config, json } => {
            let f = model::flops_per_token(&ModelConfig::load(config)?);
            if *json {
                return write_out(out, serde_json::to_string_pretty(&f).expect("serializes"));
            }
            for (name, v) in [
                ("ffn", f.ffn),
                ("qkvo", f.qkvo),
                ("attention", f.attention),
                ("router", f.router),
                ("total_activated", f.total_activated),
            ] {
                write_out(out, format_args!("{name:<16} {v:>15}"))?;
            }
            Ok(())
        }
        Command::Latency {
            config,
            params,
            sweep,
            trace: trace_path,
            out: path,
        } => {
            let cfg = ModelConfig::load(config)?;
            let params = match params {
                Some(p) => LatencyParams::load(p)?,
                None => LatencyParams::default(),
            };
            let rows = match sweep {
                Some(text) => {
                    let (axis, values) = parse_sweep(text)?;
                    latsim::sweep(&cfg, &params, axis, &values)?
                }
                None => {
                    let observed = trace_path.as_ref().map(RouterTrace::load).transpose()?;
                    let routing = observed.as_ref().map_or(Routing::Uniform, Routing::Observed);
                    vec![latsim::SweepRow {
                        axis_value: cfg.n_experts,
                        report: latsim::simulate(&cfg, &params, routing)?,
                    }]
                }
            };
            match path {
                Some(p) => {
                    let file = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
                    latsim::write_sweep_csv(&rows, file)
                }
                None => latsim::write_sweep_csv(&rows, out),
            }
        }
        Command::Eval { model, data, batch, seq } => {
            let ckpt = ckpt::load(model)?;
            let stream = tokens::read_stream(data)?;
            let nll = model::evaluate_nll(&ckpt, &stream, *batch, *seq)?;
            write_out(out, format_args!("mean_nll {nll:?}"))
        }
        Command::ExportClusters {
            model,
            trace: trace_path,
            target,
            seed,
            allow_degenerate,
            out_dir,
        } => {
            let (ckpt, trace) = load_pair(model, trace_path)?;
            let opts = ReduceOptions {
                allow_degenerate: *allow_degenerate,
                ..ReduceOptions::default()
            };
            let (plan, report) =
                reduce::uncurl_plan_with_report(&trace, &ckpt, *target, &opts, &mut Rng::new(*seed))?;
            for p in reduce::export_clusters(&report, &plan, out_dir)? {
                write_out(out, p.display())?;
            }
            Ok(())
        }
        Command::GenTokens { vocab, len, seed, out: path } => {
            if *vocab == 0 || *vocab > u32::MAX as usize {
                return Err(Error::validation(format!("vocabulary size {vocab} out of range")));
            }
            let ids = tokens::random_stream(*vocab, *len, &mut Rng::new(*seed));
            tokens::write_stream(path, &ids)?;
            write_out(out, format_args!("{} {} tokens", path.display(), ids.len()))
        }
    }
}

/// Parses `axis=v1,v2,...`.
pub fn parse_sweep(text: &str) -> Result<(Axis, Vec<usize>)> {
    let (axis, values) = text
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("sweep {text:?} is not of the form axis=v1,v2")))?;
    let axis = Axis::parse(axis.trim())?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("bad sweep value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((axis, values))
}
