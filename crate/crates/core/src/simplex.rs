//! Probability-simplex arithmetic: dense distributions, sparse truncated
//! soft tokens, temperature softmax, top-k/top-p truncation, entropy and
//! KL/JS divergences.
//!
//! Ordering convention used everywhere: descending weight, ties broken by
//! ascending token id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{input, param, Result};
use crate::scalar::Scalar;

pub type TokenId = u32;

/// Dense probability distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector<P> {
    weights: Vec<P>,
}

impl<P: Scalar> ProbVector<P> {
    /// Validates nonnegativity, finiteness and sum-to-one.
    pub fn new(weights: Vec<P>) -> Result<Self> {
        if weights.is_empty() {
            return Err(input("empty distribution"));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < P::zero()) {
            return Err(input(format!("weight {i} is negative or not finite")));
        }
        let sum: P = weights.iter().copied().sum();
        if (sum.f64() - 1.0).abs() > P::SIMPLEX_TOLERANCE {
            return Err(input(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Scales nonnegative finite weights to sum to one.
    pub fn normalized(mut weights: Vec<P>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < P::zero()) {
            return Err(input("weights must be finite and nonnegative"));
        }
        let sum: P = weights.iter().copied().sum();
        if !(sum > P::zero()) {
            return Err(input("weights have no mass"));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self { weights })
    }

    pub fn one_hot(len: usize, id: TokenId) -> Result<Self> {
        if id as usize >= len {
            return Err(input(format!("id {id} out of range for length {len}")));
        }
        let mut weights = vec![P::zero(); len];
        weights[id as usize] = P::one();
        Ok(Self { weights })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(input("empty distribution"));
        }
        Ok(Self { weights: vec![P::one() / P::of(len as f64); len] })
    }

    pub fn weights(&self) -> &[P] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_inner(self) -> Vec<P> {
        self.weights
    }

    /// Index of the largest weight; the lowest id wins ties.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.weights) as TokenId
    }

    /// Positive-weight entries in canonical order.
    pub fn ranked(&self) -> Vec<(TokenId, P)> {
        let mut ranked: Vec<(TokenId, P)> =
            self.weights.iter().enumerate().filter(|(_, w)| **w > P::zero()).map(|(i, w)| (i as TokenId, *w)).collect();
        ranked.sort_by(canonical_order);
        ranked
    }

    /// The `n` highest-weight ids in canonical order.
    pub fn top_ids(&self, n: usize) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.weights.len() as TokenId).collect();
        ids.sort_by(|a, b| {
            self.weights[*b as usize].partial_cmp(&self.weights[*a as usize]).unwrap_or(Ordering::Equal).then(a.cmp(b))
        });
        ids.truncate(n);
        ids
    }

    /// Re-expresses the distribution in another scalar type (renormalizing).
    pub fn cast<Q: Scalar>(&self) -> Result<ProbVector<Q>> {
        ProbVector::normalized(self.weights.iter().map(|w| Q::of(w.f64())).collect())
    }
}

impl<'de, P: Scalar + Deserialize<'de>> Deserialize<'de> for ProbVector<P> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let weights = Vec::<P>::deserialize(d)?;
        ProbVector::new(weights).map_err(serde::de::Error::custom)
    }
}

/// Sparse truncated and renormalized distribution: `(token id, weight)`
/// pairs in canonical order, all weights strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(TokenId, P)>", into = "Vec<(TokenId, P)>")]
#[serde(bound(serialize = "P: Scalar + Serialize", deserialize = "P: Scalar + Deserialize<'de>"))]
pub struct SoftToken<P> {
    entries: Vec<(TokenId, P)>,
}

impl<P: Scalar> SoftToken<P> {
    /// Validates and sorts `entries` into canonical order.
    pub fn new(mut entries: Vec<(TokenId, P)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(input("soft token has no entries"));
        }
        if entries.iter().any(|(_, w)| !w.is_finite() || *w <= P::zero()) {
            return Err(input("soft token weights must be finite and strictly positive"));
        }
        entries.sort_by(canonical_order);
        let mut ids: Vec<TokenId> = entries.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(input("soft token ids must be unique"));
        }
        let sum: P = entries.iter().map(|(_, w)| *w).sum();
        if (sum.f64() - 1.0).abs() > P::SIMPLEX_TOLERANCE {
            return Err(input(format!("soft token weights sum to {sum}, expected 1")));
        }
        Ok(Self { entries })
    }

    /// Drops nonpositive weights and rescales the rest to sum to one.
    pub fn normalized(entries: Vec<(TokenId, P)>) -> Result<Self> {
        let kept: Vec<(TokenId, P)> = entries.into_iter().filter(|(_, w)| *w > P::zero()).collect();
        let sum: P = kept.iter().map(|(_, w)| *w).sum();
        if !(sum > P::zero()) || !sum.is_finite() {
            return Err(input("soft token has no finite mass"));
        }
        Self::new(kept.into_iter().map(|(id, w)| (id, w / sum)).collect())
    }

    pub fn one_hot(id: TokenId) -> Self {
        Self { entries: vec![(id, P::one())] }
    }

    pub fn entries(&self) -> &[(TokenId, P)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Always false: a soft token has at least one entry.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dominant(&self) -> (TokenId, P) {
        self.entries[0]
    }

    pub fn dominant_id(&self) -> TokenId {
        self.entries[0].0
    }

    /// Second-ranked component, if the support has one.
    pub fn runner_up(&self) -> Option<(TokenId, P)> {
        self.entries.get(1).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn weight_of(&self, id: TokenId) -> P {
        self.entries.iter().find(|(i, _)| *i == id).map_or(P::zero(), |(_, w)| *w)
    }

    pub fn is_one_hot(&self) -> bool {
        self.entries.len() == 1
    }

    pub fn cast<Q: Scalar>(&self) -> Result<SoftToken<Q>> {
        SoftToken::normalized(self.entries.iter().map(|(id, w)| (*id, Q::of(w.f64()))).collect())
    }
}

impl<P: Scalar> TryFrom<Vec<(TokenId, P)>> for SoftToken<P> {
    type Error = crate::Error;

    fn try_from(entries: Vec<(TokenId, P)>) -> Result<Self> {
        Self::new(entries)
    }
}

impl<P> From<SoftToken<P>> for Vec<(TokenId, P)> {
    fn from(st: SoftToken<P>) -> Self {
        st.entries
    }
}

fn canonical_order<P: Scalar>(a: &(TokenId, P), b: &(TokenId, P)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

pub(crate) fn argmax<P: PartialOrd + Copy>(xs: &[P]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// `exp(l_i / T) / Σ_j exp(l_j / T)`, stabilized by subtracting the max logit.
pub fn softmax<P: Scalar>(logits: &[P], temperature: P) -> Result<ProbVector<P>> {
    if !(temperature > P::zero()) || !temperature.is_finite() {
        return Err(param(format!("temperature must be positive, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(input("empty logits"));
    }
    if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
        return Err(input(format!("logit {i} is not finite")));
    }
    let max = logits[argmax(logits)];
    let mut weights: Vec<P> = logits.iter().map(|l| ((*l - max) / temperature).exp()).collect();
    let sum: P = weights.iter().copied().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(ProbVector { weights })
}

/// Keeps the `k` highest-weight tokens and renormalizes.
pub fn truncate_top_k<P: Scalar>(p: &ProbVector<P>, k: usize) -> Result<SoftToken<P>> {
    truncate(p, k, P::one())
}

/// Keeps the smallest canonical-order prefix whose cumulative mass reaches
/// `threshold` (inclusive) and renormalizes.
pub fn truncate_top_p<P: Scalar>(p: &ProbVector<P>, threshold: P) -> Result<SoftToken<P>> {
    truncate(p, usize::MAX, threshold)
}

/// Top-k, then top-p over the surviving mass, then renormalization.
///
/// Weights are returned untouched when nothing with positive mass was
/// dropped, so re-truncating a result that keeps its full support is exact.
pub fn truncate<P: Scalar>(p: &ProbVector<P>, k: usize, threshold: P) -> Result<SoftToken<P>> {
    truncate_ranked(p.ranked(), k, threshold)
}

/// [`truncate`] applied to an existing soft token.
pub fn truncate_soft<P: Scalar>(st: &SoftToken<P>, k: usize, threshold: P) -> Result<SoftToken<P>> {
    truncate_ranked(st.entries.clone(), k, threshold)
}

fn truncate_ranked<P: Scalar>(mut ranked: Vec<(TokenId, P)>, k: usize, threshold: P) -> Result<SoftToken<P>> {
    if k == 0 {
        return Err(param("top-k must be at least 1"));
    }
    if !(threshold > P::zero() && threshold <= P::one()) {
        return Err(param(format!("top-p threshold must lie in (0, 1], got {threshold}")));
    }
    let support = ranked.len();
    ranked.truncate(k);

    let total: P = ranked.iter().map(|(_, w)| *w).sum();
    let target = threshold * total;
    let mut cum = P::zero();
    let mut keep = ranked.len();
    for (i, (_, w)) in ranked.iter().enumerate() {
        cum += *w;
        if cum >= target {
            keep = i + 1;
            break;
        }
    }
    ranked.truncate(keep);

    if ranked.len() == support {
        return Ok(SoftToken { entries: ranked });
    }
    let kept: P = ranked.iter().map(|(_, w)| *w).sum();
    for (_, w) in &mut ranked {
        *w /= kept;
    }
    Ok(SoftToken { entries: ranked })
}

/// Shannon entropy in nats.
pub fn entropy<P: Scalar>(st: &SoftToken<P>) -> P {
    -st.entries.iter().map(|(_, w)| *w * w.ln()).sum::<P>()
}

/// Entropy divided by `ln(m)`, `m` the support size; 0 for a single entry.
pub fn entropy_normalized<P: Scalar>(st: &SoftToken<P>) -> P {
    let m = st.len();
    if m <= 1 {
        return P::zero();
    }
    let h = entropy(st) / P::of(m as f64).ln();
    h.max(P::zero()).min(P::one())
}

/// `Σ p_i ln(p_i / q_i)`; `+∞` when `p` puts mass where `q` has none.
///
/// # Panics
/// If the two distributions have different lengths.
pub fn kl_divergence<P: Scalar>(p: &ProbVector<P>, q: &ProbVector<P>) -> P {
    kl_slices(&p.weights, &q.weights)
}

fn kl_slices<P: Scalar>(p: &[P], q: &[P]) -> P {
    assert_eq!(p.len(), q.len(), "distributions over different vocabularies");
    let mut acc = P::zero();
    for (pi, qi) in p.iter().zip(q) {
        if *pi > P::zero() {
            if *qi <= P::zero() {
                return P::infinity();
            }
            acc += *pi * (*pi / *qi).ln();
        }
    }
    acc.max(P::zero())
}

/// Jensen-Shannon divergence through the mid-point distribution; symmetric
/// and bounded by `ln 2`.
///
/// # Panics
/// If the two distributions have different lengths.
pub fn js_divergence<P: Scalar>(p: &ProbVector<P>, q: &ProbVector<P>) -> P {
    let half = P::of(0.5);
    let mid: Vec<P> = p.weights.iter().zip(&q.weights).map(|(a, b)| (*a + *b) * half).collect();
    let js = half * (kl_slices(&p.weights, &mid) + kl_slices(&q.weights, &mid));
    js.max(P::zero())
}

/// Places soft-token weights at their ids in a length-`vocab` vector.
pub fn densify<P: Scalar>(st: &SoftToken<P>, vocab: usize) -> Result<ProbVector<P>> {
    let mut weights = vec![P::zero(); vocab];
    for (id, w) in &st.entries {
        let slot = weights
            .get_mut(*id as usize)
            .ok_or_else(|| input(format!("token id {id} out of range for vocabulary {vocab}")))?;
        *slot = *w;
    }
    Ok(ProbVector { weights })
}

/// Keeps entries strictly above `epsilon`; renormalizes only when mass was dropped.
pub fn sparsify<P: Scalar>(p: &ProbVector<P>, epsilon: P) -> Result<SoftToken<P>> {
    let ranked = p.ranked();
    let support = ranked.len();
    let kept: Vec<(TokenId, P)> = ranked.into_iter().filter(|(_, w)| *w > epsilon).collect();
    if kept.is_empty() {
        return Err(input("no entries above epsilon"));
    }
    if kept.len() == support {
        Ok(SoftToken { entries: kept })
    } else {
        SoftToken::normalized(kept)
    }
}
