//! Structure-gated personalization on top of a frozen knowledge-graph scorer.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! - [`kg_store`]: triple loading, relation groups, attribute universes and
//!   sparse binary gate matrices built from training triples only.
//! - [`backbone`]: the frozen DistMult scorer and a small trainer for it.
//! - [`profile`]: interaction logs turned into per-group profile features.
//! - [`bias_head`]: the trainable gated bias head and the profile-agnostic
//!   MLP ablation.
//! - [`eval`]: filtered ranking metrics, Alignment@k, counterfactual
//!   responsiveness and placebo validation.
//! - [`synth`], [`config`], [`pipeline`]: synthetic fixtures and the
//!   end-to-end runner used by the CLI.

pub mod backbone;
pub mod bias_head;
pub mod config;
pub mod error;
pub mod eval;
pub mod kg_store;
pub mod pipeline;
pub mod profile;
pub mod synth;

pub use error::{Error, Result};

/// Mixes a stream index into a base seed (splitmix64 finalizer), so that
/// independent consumers of one run seed never share a random stream.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
