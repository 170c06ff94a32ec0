//! Toy sparse mixture-of-experts decoders and tools to shrink them.
//!
//! The crate covers the whole loop:
//!
//! - [`model`]: configuration, random and planted-partition construction,
//!   the top-1 routed forward pass, load-balancing loss, parameter and FLOPs
//!   calculators.
//! - [`trace`]: router-logit traces harvested over a token stream.
//! - [`reduce`]: per-layer expert reduction. Spectral clustering of router
//!   logits followed by permutation-aligned, frequency-weighted merging, and
//!   three frequency-based baselines.
//! - [`latsim`]: closed-form latency model of expert-parallel inference.
//! - [`ckpt`]: the `.smoe` checkpoint format.
//! - [`numerics`]: Jacobi eigensolver, k-means, Hungarian assignment.
//!
//! Runnable walkthroughs live in `examples/`; the `smoe` binary exposes the
//! pipeline on the command line.

pub mod ckpt;
pub mod cli;
pub mod error;
pub mod latsim;
pub mod model;
pub mod numerics;
pub mod reduce;
pub mod tokens;
pub mod trace;

pub use error::{Error, Result};
