//! Analysis instruments over traces and weights.
//!
//! Comparison forwards replay the trace's own inputs (teacher forcing), then
//! branch one position at a time from that shared prefix. Output
//! distributions are read at temperature 1.

use serde::{Deserialize, Serialize};

use crate::decode::{self, DecodeConfig, Mode, Phase, Trace, TraceStep};
use crate::error::{input, param, Result};
use crate::model::{DecoderCache, ModelInput, ModelWeights};
use crate::samplers::{derive_seed, Randomizer};
use crate::scalar::Scalar;
use crate::simplex::{self, ProbVector, SoftToken, TokenId};

/// Default JS threshold for [`find_branching_points`].
pub const BRANCH_THRESHOLD: f64 = 0.3;
/// Weights given to the two tokens in [`lens_probe`].
pub const LENS_WEIGHTS: (f64, f64) = (0.6, 0.4);
/// Largest support accepted by [`linearity_check`].
pub const LINEARITY_MAX_SUPPORT: usize = 8;
const LENS_TOP_SINGLE: usize = 5;
const LENS_TOP_SOFT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsProbeRecord {
    pub step: usize,
    pub entropy: f64,
    pub top1_weight: f64,
    pub top2_weight: f64,
    pub js_top1: f64,
    pub js_top2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityResult {
    /// Next distribution after the soft input.
    pub lhs: ProbVector<f64>,
    /// Weighted mixture of the per-token next distributions.
    pub rhs: ProbVector<f64>,
    pub js: f64,
}

/// Per layer `0..=L`: share of each single-token forward's top-5 lens tokens
/// found in the soft forward's top-10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensCurve {
    pub token1: Vec<f64>,
    pub token2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub randomizer: Randomizer,
    /// Normalized entropy of each randomized token.
    pub softness: Vec<f64>,
    /// JS divergence between the truncated distribution and its randomization.
    pub randomness: Vec<f64>,
}

impl ScanRecord {
    pub fn mean_softness(&self) -> f64 {
        mean(&self.softness)
    }

    pub fn mean_randomness(&self) -> f64 {
        mean(&self.randomness)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Randomizer settings visited by [`randomness_softness_scan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub points: Vec<Randomizer>,
}

impl ScanGrid {
    /// γ = 1, 2, …, 10 followed by τ = 0.3, 0.4, …, 0.9.
    pub fn standard() -> Self {
        let gammas = (1..=10).map(|g| Randomizer::Dirichlet { gamma: g as f64 });
        let taus = (3..=9).map(|t| Randomizer::GumbelSoftmax { tau: t as f64 / 10.0 });
        Self { points: gammas.chain(taus).collect() }
    }
}

/// Next-token distribution after `input`, leaving `cache` as it was.
fn branch<S: Scalar>(
    weights: &ModelWeights<S>,
    cache: &mut DecoderCache<S>,
    input: ModelInput,
) -> Result<ProbVector<f64>> {
    let len = cache.len();
    let out = weights.forward_inputs(&[input], cache, false);
    cache.truncate(len);
    to_distribution(&out?.logits)
}

fn to_distribution<S: Scalar>(logits: &[S]) -> Result<ProbVector<f64>> {
    let wide: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
    simplex::softmax(&wide, 1.0)
}

fn is_probed(step: &TraceStep) -> bool {
    step.phase == Phase::Thinking && step.fed_soft_token().is_some_and(|st| st.len() >= 2)
}

/// Walks the trace with teacher forcing and calls `visit` on every
/// multi-support soft thinking step, with the cache holding exactly the
/// context that produced that step.
fn walk<S: Scalar>(
    trace: &Trace,
    weights: &ModelWeights<S>,
    mut visit: impl FnMut(&TraceStep, &SoftToken<f64>, &mut DecoderCache<S>) -> Result<()>,
) -> Result<()> {
    decode::check_card(trace, weights)?;
    let Some(last) = trace.steps.iter().rposition(is_probed) else {
        return Ok(());
    };
    let mut cache = weights.new_cache();
    let prompt: Vec<ModelInput> = trace.prompt_ids.iter().map(|&id| ModelInput::Token(id)).collect();
    weights.forward_inputs(&prompt, &mut cache, false)?;
    for step in &trace.steps[..=last] {
        if is_probed(step) {
            visit(step, step.fed_soft_token().expect("probed steps are soft"), &mut cache)?;
        }
        weights.forward_inputs(&[step.fed_input()], &mut cache, false)?;
    }
    Ok(())
}

/// Compares the soft forward against forwards of its top-1 and top-2
/// tokens at every multi-support thinking step.
pub fn js_probe<S: Scalar>(trace: &Trace, weights: &ModelWeights<S>) -> Result<Vec<JsProbeRecord>> {
    let mut records = Vec::new();
    walk(trace, weights, |step, st, cache| {
        let (t1, w1) = st.dominant();
        let (t2, w2) = st.runner_up().expect("support of at least two");
        let p_st = branch(weights, cache, ModelInput::Soft(st.clone()))?;
        let p1 = branch(weights, cache, ModelInput::Token(t1))?;
        let p2 = branch(weights, cache, ModelInput::Token(t2))?;
        records.push(JsProbeRecord {
            step: step.step,
            entropy: simplex::entropy_normalized(st),
            top1_weight: w1,
            top2_weight: w2,
            js_top1: simplex::js_divergence(&p_st, &p1),
            js_top2: simplex::js_divergence(&p_st, &p2),
        });
        Ok(())
    })?;
    Ok(records)
}

/// Steps whose top-1 and top-2 token forwards diverge by at least
/// `js_threshold`.
pub fn find_branching_points<S: Scalar>(
    trace: &Trace,
    weights: &ModelWeights<S>,
    js_threshold: f64,
) -> Result<Vec<usize>> {
    let mut found = Vec::new();
    walk(trace, weights, |step, st, cache| {
        let t2 = st.runner_up().expect("support of at least two").0;
        let p1 = branch(weights, cache, ModelInput::Token(st.dominant_id()))?;
        let p2 = branch(weights, cache, ModelInput::Token(t2))?;
        if simplex::js_divergence(&p1, &p2) >= js_threshold {
            found.push(step.step);
        }
        Ok(())
    })?;
    Ok(found)
}

/// Inputs preceding step `step`: the prompt then every earlier fed input.
pub fn step_context(trace: &Trace, step: usize) -> Vec<ModelInput> {
    trace
        .prompt_ids
        .iter()
        .map(|&id| ModelInput::Token(id))
        .chain(trace.steps[..step.min(trace.steps.len())].iter().map(TraceStep::fed_input))
        .collect()
}

fn prime<S: Scalar>(weights: &ModelWeights<S>, context: &[ModelInput]) -> Result<DecoderCache<S>> {
    let mut cache = weights.new_cache();
    if !context.is_empty() {
        weights.forward_inputs(context, &mut cache, false)?;
    }
    Ok(cache)
}

/// Soft forward of `st` after `context` against the `st`-weighted mixture of
/// the per-token forwards.
pub fn linearity_check<S: Scalar>(
    context: &[ModelInput],
    st: &SoftToken<f64>,
    weights: &ModelWeights<S>,
) -> Result<LinearityResult> {
    if st.len() > LINEARITY_MAX_SUPPORT {
        return Err(param(format!(
            "linearity check supports at most {LINEARITY_MAX_SUPPORT} components, got {}",
            st.len()
        )));
    }
    let mut cache = prime(weights, context)?;
    let lhs = branch(weights, &mut cache, ModelInput::Soft(st.clone()))?;
    let mut mix = vec![0.0f64; weights.vocab_size()];
    for &(id, w) in st.entries() {
        let p = branch(weights, &mut cache, ModelInput::Token(id))?;
        mix.iter_mut().zip(p.weights()).for_each(|(m, q)| *m += w * q);
    }
    let rhs = ProbVector::normalized(mix)?;
    let js = simplex::js_divergence(&lhs, &rhs);
    Ok(LinearityResult { lhs, rhs, js })
}

/// [`lens_probe_weighted`] with weights 0.6 and 0.4.
pub fn lens_probe<S: Scalar>(
    context: &[ModelInput],
    token1: TokenId,
    token2: TokenId,
    weights: &ModelWeights<S>,
) -> Result<LensCurve> {
    lens_probe_weighted(context, (token1, LENS_WEIGHTS.0), (token2, LENS_WEIGHTS.1), weights)
}

/// Logit-lens overlap between a two-token soft forward and each single-token
/// forward, layer by layer. A zero weight drops that token from the soft input.
pub fn lens_probe_weighted<S: Scalar>(
    context: &[ModelInput],
    (token1, w1): (TokenId, f64),
    (token2, w2): (TokenId, f64),
    weights: &ModelWeights<S>,
) -> Result<LensCurve> {
    if token1 == token2 {
        return Err(input("lens probe needs two distinct tokens"));
    }
    let st = SoftToken::normalized(vec![(token1, w1), (token2, w2)])?;
    let mut cache = prime(weights, context)?;
    let mut lens_tops = |input: ModelInput, n: usize| -> Result<Vec<Vec<TokenId>>> {
        let len = cache.len();
        let out = weights.forward_inputs(&[input], &mut cache, true);
        cache.truncate(len);
        let layers = out?.activations.expect("captured").layers;
        layers.iter().map(|h| Ok(weights.logit_lens(h)?.top_ids(n))).collect()
    };
    let soft = lens_tops(ModelInput::Soft(st), LENS_TOP_SOFT)?;
    let one = lens_tops(ModelInput::Token(token1), LENS_TOP_SINGLE)?;
    let two = lens_tops(ModelInput::Token(token2), LENS_TOP_SINGLE)?;
    let overlap = |single: &[Vec<TokenId>]| -> Vec<f64> {
        single
            .iter()
            .zip(&soft)
            .map(|(s, big)| s.iter().filter(|id| big.contains(id)).count() as f64 / LENS_TOP_SINGLE as f64)
            .collect()
    };
    Ok(LensCurve { token1: overlap(&one), token2: overlap(&two) })
}

/// Dynamic-programming table `t[a][b] = LCS(candidate[..a], reference[..b])`,
/// stored row-major with `reference.len() + 1` columns.
fn lcs_table(candidate: &[TokenId], reference: &[TokenId]) -> Vec<u32> {
    let cols = reference.len() + 1;
    let mut t = vec![0u32; (candidate.len() + 1) * cols];
    for (i, c) in candidate.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            t[(i + 1) * cols + j + 1] =
                if c == r { t[i * cols + j] + 1 } else { t[i * cols + j + 1].max(t[(i + 1) * cols + j]) };
        }
    }
    t
}

fn score(lcs: u32, candidate_len: usize, reference_len: usize) -> RougeScore {
    let precision = lcs as f64 / candidate_len as f64;
    let recall = lcs as f64 / reference_len as f64;
    let f1 = if lcs == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    RougeScore { precision, recall, f1 }
}

/// LCS-based precision, recall and F1 over token ids.
pub fn rouge_l(candidate: &[TokenId], reference: &[TokenId]) -> Result<RougeScore> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(input("rouge_l needs non-empty sequences"));
    }
    let t = lcs_table(candidate, reference);
    Ok(score(t[t.len() - 1], candidate.len(), reference.len()))
}

/// ROUGE-L F1 of equal-length prefixes, each clipped to its sequence length.
/// Zero lengths and empty sequences produce no point.
pub fn prefix_curve(candidate: &[TokenId], reference: &[TokenId], lengths: &[usize]) -> Vec<(usize, f64)> {
    let t = lcs_table(candidate, reference);
    let cols = reference.len() + 1;
    lengths
        .iter()
        .filter_map(|&n| {
            let (a, b) = (n.min(candidate.len()), n.min(reference.len()));
            (a > 0 && b > 0).then(|| (n, score(t[a * cols + b], a, b).f1))
        })
        .collect()
}

/// Decodes every prompt under each grid point and records per-step softness
/// and randomness of the randomized thinking tokens. Prompt `i` uses seed
/// `derive_seed(base.seed, i)` at every grid point.
pub fn randomness_softness_scan<S: Scalar>(
    prompts: &[Vec<TokenId>],
    weights: &ModelWeights<S>,
    grid: &ScanGrid,
    base: &DecodeConfig,
) -> Result<Vec<ScanRecord>> {
    if grid.points.is_empty() {
        return Err(param("scan grid is empty"));
    }
    let vocab = weights.vocab_size();
    grid.points
        .iter()
        .map(|&randomizer| {
            let mut config = base.clone();
            match randomizer {
                Randomizer::Dirichlet { gamma } => {
                    config.mode = Mode::SoftDirichlet;
                    config.gamma = gamma;
                }
                Randomizer::GumbelSoftmax { tau } => {
                    config.mode = Mode::SoftGumbel;
                    config.tau = tau;
                }
            }
            let mut record = ScanRecord { randomizer, softness: Vec::new(), randomness: Vec::new() };
            for (i, prompt) in prompts.iter().enumerate() {
                config.seed = derive_seed(base.seed, i as u64);
                let trace = decode::decode(prompt, &config, weights)?;
                for step in trace.thinking_steps() {
                    if let (Some(st), Some(r)) = (&step.soft_token, &step.randomized) {
                        let pi = simplex::densify(st, vocab)?;
                        let st2 = simplex::densify(&r.token, vocab)?;
                        record.softness.push(simplex::entropy_normalized(&r.token));
                        record.randomness.push(simplex::js_divergence(&pi, &st2));
                    }
                }
            }
            Ok(record)
        })
        .collect()
}
