//! Decoding loops and replayable traces.
//!
//! Every mode runs in two phases. The thinking phase lasts until the
//! dominant component of the token fed forward is the end-of-thinking id;
//! that id is then fed as a discrete token and the answer phase commits
//! discrete tokens until the end-of-thinking id appears again or `max_len`
//! steps have run. Soft modes feed soft tokens during thinking; discrete
//! modes commit a token at every step.
//!
//! Each step draws from its own child stream `derive_seed(seed, step)`, so a
//! trace can be re-executed from its config alone.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{input, param, Error, Result};
use crate::model::{tokenizer, DecoderCache, ModelCard, ModelInput, ModelWeights};
use crate::samplers::{self, derive_seed, RandomizedSoftToken, RngState, Truncation};
use crate::scalar::Scalar;
use crate::simplex::{self, ProbVector, SoftToken, TokenId};

/// Version of the JSONL trace layout.
pub const TRACE_SCHEMA: u32 = 1;

/// Recorded in trace headers: `entropy` divides by the log of the truncated
/// support size.
pub const ENTROPY_NORMALIZATION: &str = "ln_truncated_support";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Greedy,
    Sample,
    SoftVanilla,
    SoftDirichlet,
    SoftGumbel,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Greedy, Mode::Sample, Mode::SoftVanilla, Mode::SoftDirichlet, Mode::SoftGumbel];

    pub fn is_soft(self) -> bool {
        matches!(self, Mode::SoftVanilla | Mode::SoftDirichlet | Mode::SoftGumbel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Greedy => "greedy",
            Mode::Sample => "sample",
            Mode::SoftVanilla => "soft_vanilla",
            Mode::SoftDirichlet => "soft_dirichlet",
            Mode::SoftGumbel => "soft_gumbel",
        }
    }
}

/// Answer-phase rule for soft modes. Discrete modes keep their own rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    DiscreteSample,
    DiscreteGreedy,
}

/// Which soft token decides the switch to the answer phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EotCheck {
    /// The randomized token actually fed forward.
    #[default]
    Randomized,
    /// The truncated distribution before the randomizer.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: Mode,
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub gamma: f64,
    pub tau: f64,
    pub max_len: usize,
    pub seed: u64,
    pub eot_id: TokenId,
    pub answer_mode: AnswerMode,
    pub eot_check: EotCheck,
    /// Truncation applied to Dirichlet samples; `None` keeps the full support.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_truncation: Option<Truncation>,
    /// Temperature→0 limit: every step's distribution becomes one-hot on
    /// the argmax.
    pub zero_temperature: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SoftVanilla,
            temperature: 0.6,
            top_k: 30,
            top_p: 0.95,
            gamma: 4.0,
            tau: 0.5,
            max_len: 32_768,
            seed: 0,
            eot_id: tokenizer::EOT,
            answer_mode: AnswerMode::DiscreteSample,
            eot_check: EotCheck::Randomized,
            resample_truncation: None,
            zero_temperature: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, card: &ModelCard) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(param(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(param("top_k must be at least 1"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(param(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(param(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(param(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_len == 0 {
            return Err(param("max_len must be at least 1"));
        }
        if self.eot_id as usize >= card.vocab_size {
            return Err(param(format!("eot_id {} outside vocabulary {}", self.eot_id, card.vocab_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Thinking,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eot,
    /// `max_len` steps ran, or the context window filled up.
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub phase: Phase,
    /// Seed of this step's random stream.
    pub child_seed: u64,
    /// Top entry of the token fed forward.
    pub dominant_id: TokenId,
    /// Normalized entropy of the truncated distribution.
    pub entropy: f64,
    /// Shannon entropy (nats) of the truncated distribution.
    pub raw_entropy: f64,
    /// Truncated distribution; soft thinking steps only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_token: Option<SoftToken<f64>>,
    /// Randomized token fed forward; randomized soft thinking steps only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomized: Option<RandomizedSoftToken<f64>>,
    /// Committed id: every discrete step, plus the soft step that hands over
    /// to the answer phase (which commits the end-of-thinking id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<TokenId>,
}

impl TraceStep {
    /// The soft token that was embedded at this step, if any.
    pub fn fed_soft_token(&self) -> Option<&SoftToken<f64>> {
        self.randomized.as_ref().map(|r| &r.token).or(self.soft_token.as_ref())
    }

    /// What the next position received as input.
    pub fn fed_input(&self) -> ModelInput {
        match (self.token, self.fed_soft_token()) {
            (None, Some(st)) => ModelInput::Soft(st.clone()),
            _ => ModelInput::Token(self.token.unwrap_or(self.dominant_id)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub config: DecodeConfig,
    pub card: ModelCard,
    pub prompt_ids: Vec<TokenId>,
    pub steps: Vec<TraceStep>,
    pub termination: Termination,
    /// Free-form provenance written into the header (e.g. an experiment hash).
    pub labels: BTreeMap<String, String>,
    /// Wall-clock time; not serialized and ignored by equality.
    pub duration: Option<Duration>,
}

impl PartialEq for Trace {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.card == other.card
            && self.prompt_ids == other.prompt_ids
            && self.steps == other.steps
            && self.termination == other.termination
            && self.labels == other.labels
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    Header {
        schema: u32,
        entropy_normalization: String,
        config: DecodeConfig,
        card: ModelCard,
        prompt_ids: Vec<TokenId>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        labels: BTreeMap<String, String>,
    },
    Step(TraceStep),
    End {
        termination: Termination,
        steps: usize,
    },
}

impl Trace {
    pub fn thinking_steps(&self) -> impl Iterator<Item = &TraceStep> {
        self.steps.iter().filter(|s| s.phase == Phase::Thinking)
    }

    /// Top-1 id of every step: committed ids for discrete steps, the fed
    /// token's dominant component for soft steps.
    pub fn dominant_ids(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.dominant_id).collect()
    }

    /// Inputs that followed the prompt, in order.
    pub fn fed_inputs(&self) -> Vec<ModelInput> {
        self.steps.iter().map(TraceStep::fed_input).collect()
    }

    /// Header line, one line per step, then an end line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let header = TraceLine::Header {
            schema: TRACE_SCHEMA,
            entropy_normalization: ENTROPY_NORMALIZATION.into(),
            config: self.config.clone(),
            card: self.card.clone(),
            prompt_ids: self.prompt_ids.clone(),
            labels: self.labels.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for step in &self.steps {
            serde_json::to_writer(&mut out, &TraceLine::Step(step.clone()))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &TraceLine::End { termination: self.termination, steps: self.steps.len() })?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let bad = |msg: String| Error::Compatibility(format!("trace: {msg}"));
        let mut lines = reader.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let first = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let (config, card, prompt_ids, labels) = match serde_json::from_str(&first)? {
            TraceLine::Header { schema, config, card, prompt_ids, labels, .. } if schema == TRACE_SCHEMA => {
                (config, card, prompt_ids, labels)
            }
            TraceLine::Header { schema, .. } => return Err(bad(format!("unsupported schema {schema}"))),
            _ => return Err(bad("first line is not a header".into())),
        };
        let mut steps = Vec::new();
        for line in lines {
            match serde_json::from_str(&line?)? {
                TraceLine::Step(step) => steps.push(step),
                TraceLine::End { termination, steps: n } => {
                    if n != steps.len() {
                        return Err(bad(format!("end record counts {n} steps, found {}", steps.len())));
                    }
                    return Ok(Trace { config, card, prompt_ids, steps, termination, labels, duration: None });
                }
                TraceLine::Header { .. } => return Err(bad("second header".into())),
            }
        }
        Err(bad("missing end record".into()))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }
}

/// Runs whichever loop `config.mode` selects.
pub fn decode<S: Scalar>(prompt: &[TokenId], config: &DecodeConfig, weights: &ModelWeights<S>) -> Result<Trace> {
    run(prompt, config, weights, None)
}

/// Greedy or temperature-sampled decoding.
pub fn decode_discrete<S: Scalar>(
    prompt: &[TokenId],
    config: &DecodeConfig,
    weights: &ModelWeights<S>,
) -> Result<Trace> {
    if config.mode.is_soft() {
        return Err(param(format!("decode_discrete called with mode {}", config.mode.name())));
    }
    run(prompt, config, weights, None)
}

/// Vanilla or randomized soft decoding.
pub fn decode_soft<S: Scalar>(prompt: &[TokenId], config: &DecodeConfig, weights: &ModelWeights<S>) -> Result<Trace> {
    if !config.mode.is_soft() {
        return Err(param(format!("decode_soft called with mode {}", config.mode.name())));
    }
    run(prompt, config, weights, None)
}

/// Re-executes `trace` from its stored config and prompt. Labels are
/// carried over.
pub fn replay<S: Scalar>(trace: &Trace, weights: &ModelWeights<S>) -> Result<Trace> {
    replay_limited(trace, weights, None)
}

/// Re-executes only the first `steps` steps.
pub fn replay_prefix<S: Scalar>(trace: &Trace, weights: &ModelWeights<S>, steps: usize) -> Result<Trace> {
    replay_limited(trace, weights, Some(steps))
}

fn replay_limited<S: Scalar>(trace: &Trace, weights: &ModelWeights<S>, limit: Option<usize>) -> Result<Trace> {
    check_card(trace, weights)?;
    let mut out = run(&trace.prompt_ids, &trace.config, weights, limit)?;
    out.labels = trace.labels.clone();
    Ok(out)
}

pub(crate) fn check_card<S: Scalar>(trace: &Trace, weights: &ModelWeights<S>) -> Result<()> {
    if &trace.card == weights.card() {
        Ok(())
    } else {
        Err(Error::Compatibility("trace was produced by a model with a different card".into()))
    }
}

/// Temperature softmax of f32/f64 logits into an f64 distribution, or the
/// one-hot argmax in the zero-temperature limit.
pub fn next_distribution<S: Scalar>(logits: &[S], config: &DecodeConfig) -> Result<ProbVector<f64>> {
    let wide: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
    if config.zero_temperature {
        ProbVector::one_hot(wide.len(), simplex::argmax(&wide) as TokenId)
    } else {
        simplex::softmax(&wide, config.temperature)
    }
}

fn run<S: Scalar>(
    prompt: &[TokenId],
    config: &DecodeConfig,
    weights: &ModelWeights<S>,
    limit: Option<usize>,
) -> Result<Trace> {
    let started = Instant::now();
    if prompt.is_empty() {
        return Err(input("prompt is empty"));
    }
    config.validate(weights.card())?;
    let context = weights.card().context;
    if prompt.len() > context {
        return Err(Error::Capacity { requested: prompt.len(), context });
    }
    let max_steps = limit.map_or(config.max_len, |n| n.min(config.max_len));

    let mut cache: DecoderCache<S> = weights.new_cache();
    let prompt_inputs: Vec<ModelInput> = prompt.iter().map(|&id| ModelInput::Token(id)).collect();
    let mut logits = weights.forward_inputs(&prompt_inputs, &mut cache, false)?.logits;

    let mut steps = Vec::new();
    let mut phase = Phase::Thinking;
    let mut termination = Termination::MaxLen;
    for step in 0..max_steps {
        let child_seed = derive_seed(config.seed, step as u64);
        let mut rng = RngState::new(child_seed);
        let record = decode_step(&logits, config, phase, step, child_seed, &mut rng)?;
        let committed_eot = record.token == Some(config.eot_id);
        let switch = phase == Phase::Thinking && record.dominant_id == config.eot_id;
        let next_input = record.fed_input();
        let done = phase == Phase::Answer && committed_eot;
        phase = if switch { Phase::Answer } else { phase };
        steps.push(record);
        if done {
            termination = Termination::Eot;
            break;
        }
        if step + 1 == max_steps || cache.len() == context {
            break;
        }
        logits = weights.forward_inputs(&[next_input], &mut cache, false)?.logits;
    }
    Ok(Trace {
        config: config.clone(),
        card: weights.card().clone(),
        prompt_ids: prompt.to_vec(),
        steps,
        termination,
        labels: BTreeMap::new(),
        duration: Some(started.elapsed()),
    })
}

fn decode_step<S: Scalar>(
    logits: &[S],
    config: &DecodeConfig,
    phase: Phase,
    step: usize,
    child_seed: u64,
    rng: &mut RngState,
) -> Result<TraceStep> {
    let probs = next_distribution(logits, config)?;
    let truncated = simplex::truncate(&probs, config.top_k, config.top_p)?;
    let entropy = simplex::entropy_normalized(&truncated);
    let raw_entropy = simplex::entropy(&truncated);
    let discrete = |token: TokenId| TraceStep {
        step,
        phase,
        child_seed,
        dominant_id: token,
        entropy,
        raw_entropy,
        soft_token: None,
        randomized: None,
        token: Some(token),
    };
    let greedy = || {
        if config.zero_temperature {
            probs.argmax()
        } else {
            let wide: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
            simplex::argmax(&wide) as TokenId
        }
    };

    let soft_thinking = phase == Phase::Thinking && config.mode.is_soft();
    if !soft_thinking {
        let use_greedy = match config.mode {
            Mode::Greedy => true,
            Mode::Sample => false,
            _ => config.answer_mode == AnswerMode::DiscreteGreedy,
        };
        let token = if use_greedy { greedy() } else { samplers::sample_categorical(&truncated, rng) };
        return Ok(discrete(token));
    }

    let randomized = match config.mode {
        Mode::SoftDirichlet => Some(samplers::dirichlet_resample(
            &truncated,
            config.gamma,
            config.resample_truncation.unwrap_or(Truncation::NONE),
            rng,
        )?),
        Mode::SoftGumbel => Some(samplers::gumbel_softmax(&truncated, config.tau, rng)?),
        _ => None,
    };
    let fed = randomized.as_ref().map_or(&truncated, |r| &r.token);
    let check = match config.eot_check {
        EotCheck::Randomized => fed,
        EotCheck::Truncated => &truncated,
    };
    // at the switch the end-of-thinking id is what goes forward
    let switch = check.dominant_id() == config.eot_id;
    let dominant_id = if switch { config.eot_id } else { fed.dominant_id() };
    Ok(TraceStep {
        step,
        phase,
        child_seed,
        dominant_id,
        entropy,
        raw_entropy,
        soft_token: Some(truncated),
        randomized,
        token: switch.then_some(config.eot_id),
    })
}
