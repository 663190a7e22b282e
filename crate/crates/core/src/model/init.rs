//! Seeded weight initialization for toy models.

use serde::{Deserialize, Serialize};

use super::{tokenizer, Block, Matrix, ModelCard, ModelWeights, Norm, OutputHead, Positional};
use crate::error::Result;
use crate::samplers::RngState;
use crate::scalar::Scalar;
use crate::simplex::TokenId;

/// Shape and scale of a randomly initialized toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    pub eot_id: TokenId,
    pub positional: Positional,
    pub tied_head: bool,
    /// Standard deviation of embedding entries. With a tied head the logit
    /// scale is roughly `embed_std * sqrt(dim)`.
    pub embed_std: f64,
    /// Linear layers use `weight_gain / sqrt(fan_in)`.
    pub weight_gain: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            vocab_size: tokenizer::VOCAB_SIZE,
            dim: 32,
            layers: 2,
            heads: 4,
            context: 1024,
            eot_id: tokenizer::EOT,
            positional: Positional::Rope,
            tied_head: true,
            embed_std: 0.5,
            weight_gain: 3.0,
        }
    }
}

impl ToySpec {
    pub fn card(&self) -> ModelCard {
        ModelCard {
            vocab_size: self.vocab_size,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            context: self.context,
            eot_id: self.eot_id,
            tied_head: self.tied_head,
            positional: self.positional,
            norm: Norm::Rms,
            output: OutputHead::Logits,
            embed_scale: None,
        }
    }
}

fn gaussian<S: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Matrix<S> {
    let data = (0..rows * cols).map(|_| S::of(std * rng.standard_normal())).collect();
    Matrix { rows, cols, data }
}

/// Random pre-norm transformer; identical seeds give identical weights.
pub fn init_toy_model<S: Scalar>(spec: &ToySpec, seed: u64) -> Result<ModelWeights<S>> {
    let card = spec.card();
    card.validate()?;
    let mut rng = RngState::new(seed);
    let (d, h) = (card.dim, card.mlp_hidden());
    let lin = |fan_in: usize| spec.weight_gain / (fan_in as f64).sqrt();
    let ones = || Some(vec![S::one(); d]);

    let embed = gaussian(card.vocab_size, d, spec.embed_std, &mut rng);
    let pos_embed =
        (card.positional == Positional::Learned).then(|| gaussian(card.context, d, spec.embed_std * 0.1, &mut rng));
    let blocks = (0..card.layers)
        .map(|_| Block {
            attn_norm: ones(),
            wq: gaussian(d, d, lin(d), &mut rng),
            wk: gaussian(d, d, lin(d), &mut rng),
            wv: gaussian(d, d, lin(d), &mut rng),
            wo: gaussian(d, d, lin(d), &mut rng),
            mlp_norm: ones(),
            up: gaussian(h, d, lin(d), &mut rng),
            down: gaussian(d, h, lin(h), &mut rng),
        })
        .collect();
    let lm_head = (!card.tied_head).then(|| gaussian(card.vocab_size, d, spec.embed_std, &mut rng));
    ModelWeights::from_parts(card, embed, pos_embed, blocks, ones(), lm_head)
}

/// Zero-layer model whose next-token distribution is exactly linear in the
/// input embedding: identity embeddings (`dim == vocab`) and a column
/// stochastic head read as probabilities. Feeding a soft token yields the
/// same mixture of the per-token next distributions.
pub fn init_linear_mixture_model<S: Scalar>(vocab_size: usize, seed: u64) -> Result<ModelWeights<S>> {
    let card = ModelCard {
        vocab_size,
        dim: vocab_size,
        layers: 0,
        heads: 1,
        context: 1 << 16,
        eot_id: (vocab_size as TokenId).saturating_sub(1).min(tokenizer::EOT),
        tied_head: false,
        positional: Positional::None,
        norm: Norm::None,
        output: OutputHead::Probabilities,
        embed_scale: None,
    };
    let mut rng = RngState::new(seed);
    let mut embed = Matrix::zeros(vocab_size, vocab_size);
    for i in 0..vocab_size {
        embed.data[i * vocab_size + i] = S::one();
    }
    // column j is the next-token distribution after token j
    let mut head = vec![0.0f64; vocab_size * vocab_size];
    for j in 0..vocab_size {
        let col: Vec<f64> = (0..vocab_size).map(|_| (2.0 * rng.standard_normal()).exp()).collect();
        let total: f64 = col.iter().sum();
        for (i, v) in col.into_iter().enumerate() {
            head[i * vocab_size + j] = v / total;
        }
    }
    let lm_head = Matrix { rows: vocab_size, cols: vocab_size, data: head.into_iter().map(S::of).collect() };
    ModelWeights::from_parts(card, embed, None, Vec::new(), None, Some(lm_head))
}
