//! Minimal pre-norm decoder-only transformer.
//!
//! Inputs are embedding vectors rather than token ids, so a soft token (a
//! convex mixture of embedding rows) and a discrete token go through the
//! same forward path. Positions are processed one at a time against the
//! [`DecoderCache`]; a full recompute and an incremental decode therefore
//! execute identical arithmetic.

mod init;
mod io;
pub mod tokenizer;

use serde::{Deserialize, Serialize};

pub use init::{init_linear_mixture_model, init_toy_model, ToySpec};
pub use io::{card_path, load_weights, save_weights};

use crate::error::{input, Error, Result};
use crate::scalar::Scalar;
use crate::simplex::{self, ProbVector, SoftToken, TokenId};

/// Architecture description stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    pub eot_id: TokenId,
    pub tied_head: bool,
    pub positional: Positional,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub output: OutputHead,
    /// Multiplier applied to input embeddings after soft mixing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_scale: Option<f64>,
}

impl ModelCard {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Compatibility(format!("model card: {msg}")));
        if self.vocab_size == 0 || self.dim == 0 || self.context == 0 {
            return fail("vocab_size, dim and context must be positive".into());
        }
        if self.eot_id as usize >= self.vocab_size {
            return fail(format!("eot_id {} >= vocab_size {}", self.eot_id, self.vocab_size));
        }
        if self.layers > 0 {
            if self.heads == 0 || self.dim % self.heads != 0 {
                return fail(format!("dim {} not divisible by heads {}", self.dim, self.heads));
            }
            if self.positional == Positional::Rope && self.head_dim() % 2 != 0 {
                return fail("rotary positions need an even head dimension".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    /// Rotary embedding of queries and keys.
    Rope,
    /// Learned absolute position table added to the input.
    Learned,
    None,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Rms,
    None,
}

/// How the LM head output is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Head output is a logit vector.
    #[default]
    Logits,
    /// Head output is already a probability vector; the forward reports its
    /// log so that a temperature-1 softmax returns it unchanged.
    Probabilities,
}

const RMS_EPS: f64 = 1e-5;
const ROPE_BASE: f64 = 10_000.0;

/// Row-major `rows × cols` matrix; `matvec` computes `W·x` like a linear layer
/// with weight shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(input(format!("matrix data has {} values, expected {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).fold(S::zero(), |acc, (w, v)| acc + *w * *v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<S> {
    pub attn_norm: Option<Vec<S>>,
    pub wq: Matrix<S>,
    pub wk: Matrix<S>,
    pub wv: Matrix<S>,
    pub wo: Matrix<S>,
    pub mlp_norm: Option<Vec<S>>,
    pub up: Matrix<S>,
    pub down: Matrix<S>,
}

/// Transformer parameters. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<S> {
    card: ModelCard,
    embed: Matrix<S>,
    pos_embed: Option<Matrix<S>>,
    blocks: Vec<Block<S>>,
    final_norm: Option<Vec<S>>,
    lm_head: Option<Matrix<S>>,
}

/// Per-layer hidden states of the last processed position: the input
/// embedding (layer 0) followed by each block's post-residual output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations<S> {
    pub layers: Vec<Vec<S>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    /// Next-position logits for the last input.
    pub logits: Vec<S>,
    pub activations: Option<LayerActivations<S>>,
}

/// Cached attention keys and values, one flat `[len, dim]` buffer per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderCache<S> {
    keys: Vec<Vec<S>>,
    values: Vec<Vec<S>>,
    dim: usize,
    len: usize,
}

impl<S: Scalar> DecoderCache<S> {
    pub fn new(card: &ModelCard) -> Self {
        Self { keys: vec![Vec::new(); card.layers], values: vec![Vec::new(); card.layers], dim: card.dim, len: 0 }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Drops positions `len..`.
    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            for buf in self.keys.iter_mut().chain(self.values.iter_mut()) {
                buf.truncate(len * self.dim);
            }
            self.len = len;
        }
    }

    pub fn clear(&mut self) {
        self.truncate(0);
    }
}

/// One input position: a discrete token or a soft token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelInput {
    Token(TokenId),
    Soft(SoftToken<f64>),
}

impl<S: Scalar> ModelWeights<S> {
    /// Assembles weights, checking every shape against the card.
    pub fn from_parts(
        card: ModelCard,
        embed: Matrix<S>,
        pos_embed: Option<Matrix<S>>,
        blocks: Vec<Block<S>>,
        final_norm: Option<Vec<S>>,
        lm_head: Option<Matrix<S>>,
    ) -> Result<Self> {
        card.validate()?;
        let weights = Self { card, embed, pos_embed, blocks, final_norm, lm_head };
        weights.check_shapes()?;
        Ok(weights)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.card;
        let d = c.dim;
        let want = |name: &str, got: [usize; 2], expected: [usize; 2]| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::Compatibility(format!("{name}: shape {got:?}, card expects {expected:?}")))
            }
        };
        let want_norm = |name: &str, v: &Option<Vec<S>>| match (c.norm, v) {
            (Norm::Rms, Some(g)) if g.len() == d => Ok(()),
            (Norm::None, None) => Ok(()),
            _ => Err(Error::Compatibility(format!("{name}: does not match card norm {:?}", c.norm))),
        };
        want("embed.weight", self.embed.shape(), [c.vocab_size, d])?;
        match (c.positional, &self.pos_embed) {
            (Positional::Learned, Some(p)) => want("pos_embed.weight", p.shape(), [c.context, d])?,
            (Positional::Learned, None) => {
                return Err(Error::Compatibility("learned positions need pos_embed.weight".into()))
            }
            (_, Some(_)) => {
                return Err(Error::Compatibility("pos_embed.weight present but positions are not learned".into()))
            }
            _ => {}
        }
        if self.blocks.len() != c.layers {
            return Err(Error::Compatibility(format!(
                "{} blocks, card declares {} layers",
                self.blocks.len(),
                c.layers
            )));
        }
        let h = c.mlp_hidden();
        for (i, b) in self.blocks.iter().enumerate() {
            want_norm(&format!("block.{i}.attn.norm"), &b.attn_norm)?;
            want_norm(&format!("block.{i}.mlp.norm"), &b.mlp_norm)?;
            for (name, m) in [("q", &b.wq), ("k", &b.wk), ("v", &b.wv), ("o", &b.wo)] {
                want(&format!("block.{i}.attn.{name}.weight"), m.shape(), [d, d])?;
            }
            want(&format!("block.{i}.mlp.up.weight"), b.up.shape(), [h, d])?;
            want(&format!("block.{i}.mlp.down.weight"), b.down.shape(), [d, h])?;
        }
        want_norm("final_norm", &self.final_norm)?;
        match (c.tied_head, &self.lm_head) {
            (true, None) => {}
            (false, Some(w)) => want("lm_head.weight", w.shape(), [c.vocab_size, d])?,
            (true, Some(_)) => return Err(Error::Compatibility("tied head but lm_head.weight present".into())),
            (false, None) => return Err(Error::Compatibility("untied head needs lm_head.weight".into())),
        }
        let all = self
            .embed
            .data
            .iter()
            .chain(self.pos_embed.iter().flat_map(|m| m.data.iter()))
            .chain(self.blocks.iter().flat_map(|b| {
                b.attn_norm
                    .iter()
                    .flatten()
                    .chain(b.mlp_norm.iter().flatten())
                    .chain([&b.wq, &b.wk, &b.wv, &b.wo, &b.up, &b.down].into_iter().flat_map(|m| m.data.iter()))
            }))
            .chain(self.final_norm.iter().flatten())
            .chain(self.lm_head.iter().flat_map(|m| m.data.iter()));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Compatibility("weights contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn card(&self) -> &ModelCard {
        &self.card
    }

    pub fn vocab_size(&self) -> usize {
        self.card.vocab_size
    }

    pub fn embedding(&self) -> &Matrix<S> {
        &self.embed
    }

    pub fn new_cache(&self) -> DecoderCache<S> {
        DecoderCache::new(&self.card)
    }

    fn scaled(&self, mut v: Vec<S>) -> Vec<S> {
        if let Some(scale) = self.card.embed_scale {
            let scale = S::of(scale);
            v.iter_mut().for_each(|x| *x *= scale);
        }
        v
    }

    fn check_id(&self, id: TokenId) -> Result<()> {
        if (id as usize) < self.card.vocab_size {
            Ok(())
        } else {
            Err(input(format!("token id {id} out of range for vocabulary {}", self.card.vocab_size)))
        }
    }

    /// Embedding row of a discrete token.
    pub fn embed_token(&self, id: TokenId) -> Result<Vec<S>> {
        self.check_id(id)?;
        Ok(self.scaled(self.embed.row(id as usize).to_vec()))
    }

    /// `Σ_i p_i · e_i`, accumulated in f64. A one-hot soft token reproduces
    /// its embedding row exactly.
    pub fn embed_soft(&self, st: &SoftToken<f64>) -> Result<Vec<S>> {
        let mut acc = vec![0.0f64; self.card.dim];
        for &(id, w) in st.entries() {
            self.check_id(id)?;
            for (a, e) in acc.iter_mut().zip(self.embed.row(id as usize)) {
                *a += w * e.f64();
            }
        }
        Ok(self.scaled(acc.into_iter().map(S::of).collect()))
    }

    pub fn embed(&self, input: &ModelInput) -> Result<Vec<S>> {
        match input {
            ModelInput::Token(id) => self.embed_token(*id),
            ModelInput::Soft(st) => self.embed_soft(st),
        }
    }

    /// Runs `inputs` (embedding vectors) after the cached prefix and returns
    /// next-position logits for the last input. With `capture`, also the
    /// per-layer hidden states of that position.
    pub fn forward(&self, inputs: &[Vec<S>], cache: &mut DecoderCache<S>, capture: bool) -> Result<ForwardOutput<S>> {
        if inputs.is_empty() {
            return Err(input("forward needs at least one input position"));
        }
        let requested = cache.len + inputs.len();
        if requested > self.card.context {
            return Err(Error::Capacity { requested, context: self.card.context });
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != self.card.dim) {
            return Err(input(format!("input width {} differs from model dim {}", x.len(), self.card.dim)));
        }
        let mut last = None;
        for (i, x) in inputs.iter().enumerate() {
            let want = capture && i + 1 == inputs.len();
            last = Some(self.step(x, cache, want)?);
        }
        let (hidden, activations) = last.expect("at least one input");
        Ok(ForwardOutput { logits: self.head(&hidden), activations })
    }

    /// Convenience: embeds `inputs` then runs [`Self::forward`].
    pub fn forward_inputs(
        &self,
        inputs: &[ModelInput],
        cache: &mut DecoderCache<S>,
        capture: bool,
    ) -> Result<ForwardOutput<S>> {
        let embedded = inputs.iter().map(|x| self.embed(x)).collect::<Result<Vec<_>>>()?;
        self.forward(&embedded, cache, capture)
    }

    fn step(
        &self,
        input: &[S],
        cache: &mut DecoderCache<S>,
        capture: bool,
    ) -> Result<(Vec<S>, Option<LayerActivations<S>>)> {
        let pos = cache.len;
        let mut x = input.to_vec();
        if let Some(table) = &self.pos_embed {
            x.iter_mut().zip(table.row(pos)).for_each(|(a, p)| *a += *p);
        }
        check_finite(&x, 0)?;
        let mut captured = capture.then(|| vec![x.clone()]);

        for (l, block) in self.blocks.iter().enumerate() {
            let h = rms_norm(&x, block.attn_norm.as_deref());
            let mut q = block.wq.matvec(&h);
            let mut k = block.wk.matvec(&h);
            let v = block.wv.matvec(&h);
            if self.card.positional == Positional::Rope {
                rope(&mut q, self.card.heads, pos);
                rope(&mut k, self.card.heads, pos);
            }
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);
            let attended = self.attend(&q, &cache.keys[l], &cache.values[l], pos + 1);
            add_into(&mut x, &block.wo.matvec(&attended));

            let h = rms_norm(&x, block.mlp_norm.as_deref());
            let mut mid = block.up.matvec(&h);
            mid.iter_mut().for_each(|z| *z = gelu(*z));
            add_into(&mut x, &block.down.matvec(&mid));

            check_finite(&x, l + 1)?;
            if let Some(c) = captured.as_mut() {
                c.push(x.clone());
            }
        }
        cache.len += 1;
        Ok((x, captured.map(|layers| LayerActivations { layers })))
    }

    fn attend(&self, q: &[S], keys: &[S], values: &[S], positions: usize) -> Vec<S> {
        let d = self.card.dim;
        let hd = self.card.head_dim();
        let scale = S::one() / S::of(hd as f64).sqrt();
        let mut out = vec![S::zero(); d];
        let mut scores = vec![S::zero(); positions];
        for h in 0..self.card.heads {
            let span = h * hd..(h + 1) * hd;
            let qh = &q[span.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                let kh = &keys[j * d + span.start..j * d + span.end];
                *s = dot(qh, kh) * scale;
            }
            let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let oh = &mut out[span.clone()];
            for (j, s) in scores.iter().enumerate() {
                let a = *s / total;
                let vh = &values[j * d + span.start..j * d + span.end];
                oh.iter_mut().zip(vh).for_each(|(o, v)| *o += a * *v);
            }
        }
        out
    }

    /// Final normalization followed by the LM head.
    pub fn head(&self, hidden: &[S]) -> Vec<S> {
        let h = rms_norm(hidden, self.final_norm.as_deref());
        let raw = match &self.lm_head {
            Some(w) => w.matvec(&h),
            None => self.embed.matvec(&h),
        };
        match self.card.output {
            OutputHead::Logits => raw,
            OutputHead::Probabilities => raw.into_iter().map(|p| p.max(S::min_positive_value()).ln()).collect(),
        }
    }

    /// Logit lens: final normalization, LM head, then a temperature-1
    /// softmax in f64.
    pub fn logit_lens(&self, hidden: &[S]) -> Result<ProbVector<f64>> {
        if hidden.len() != self.card.dim {
            return Err(input(format!("hidden width {} differs from model dim {}", hidden.len(), self.card.dim)));
        }
        let logits: Vec<f64> = self.head(hidden).into_iter().map(Scalar::f64).collect();
        simplex::softmax(&logits, 1.0)
    }
}

fn check_finite<S: Scalar>(x: &[S], layer: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer })
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

fn add_into<S: Scalar>(x: &mut [S], delta: &[S]) {
    x.iter_mut().zip(delta).for_each(|(a, b)| *a += *b);
}

fn rms_norm<S: Scalar>(x: &[S], gain: Option<&[S]>) -> Vec<S> {
    let Some(gain) = gain else {
        return x.to_vec();
    };
    let ms = x.iter().fold(S::zero(), |acc, v| acc + *v * *v) / S::of(x.len() as f64);
    let inv = S::one() / (ms + S::of(RMS_EPS)).sqrt();
    x.iter().zip(gain).map(|(v, g)| *v * inv * *g).collect()
}

fn gelu<S: Scalar>(x: S) -> S {
    // tanh approximation
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    S::of(0.5) * x * (S::one() + (c * (x + S::of(0.044715) * x * x * x)).tanh())
}

fn rope<S: Scalar>(v: &mut [S], heads: usize, pos: usize) {
    let hd = v.len() / heads;
    for head in v.chunks_exact_mut(hd) {
        for i in 0..hd / 2 {
            let theta = pos as f64 * ROPE_BASE.powf(-2.0 * i as f64 / hd as f64);
            let (sin, cos) = theta.sin_cos();
            let (sin, cos) = (S::of(sin), S::of(cos));
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * cos - b * sin;
            head[2 * i + 1] = a * sin + b * cos;
        }
    }
}
