//! Decoder-only transformer inference with native soft-input decoding.
//!
//! Soft Thinking feeds the truncated next-token distribution (a *soft
//! token*) back into the model as a probability-weighted mixture of
//! embedding rows instead of committing to one sampled token. This crate
//! provides the pieces needed to run and study that process on small
//! models:
//!
//! - [`simplex`]: probability-vector arithmetic (softmax, truncation,
//!   entropy, KL/JS divergence),
//! - [`samplers`]: seeded categorical, Gumbel-Max, Gumbel-top-k,
//!   Gumbel-Softmax and Dirichlet resampling,
//! - [`model`]: a small pre-norm transformer with soft-input embedding,
//!   incremental cache, logit lens and safetensors weights,
//! - [`decode`]: greedy, sampling, vanilla and randomized soft decoding
//!   loops producing replayable traces,
//! - [`probes`]: forward-comparison, linearity, logit-lens, ROUGE-L and
//!   softness/randomness instruments.
//!
//! Model math is generic over [`Scalar`] (f32 by default); all probability
//! post-processing runs in f64.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decode;
pub mod error;
pub mod model;
pub mod probes;
pub mod samplers;
pub mod scalar;
pub mod simplex;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use simplex::TokenId;

/// Vocabulary distribution in f64.
pub type ProbVector = simplex::ProbVector<f64>;
/// Truncated soft token in f64.
pub type SoftToken = simplex::SoftToken<f64>;
/// Transformer weights in f32.
pub type ModelWeights = model::ModelWeights<f32>;
/// Attention cache matching [`ModelWeights`].
pub type DecoderCache = model::DecoderCache<f32>;
/// Randomized soft token in f64.
pub type RandomizedSoftToken = samplers::RandomizedSoftToken<f64>;
