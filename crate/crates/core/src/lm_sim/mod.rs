//! Deterministic toy language model standing in for a black-box LLM.
//!
//! Logits are a per-model background drawn from a seeded hash (a skewed
//! unigram distribution) plus a boost on a small preference set derived from
//! the last three context tokens. Sampling is exact but never touches the
//! whole vocabulary: the background is served by an alias table and every
//! per-step modification (preferences, watermark bias, paraphrase anchor,
//! MemFree mask) is folded in by rejection.

mod generate;
mod paraphrase;

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};

pub use generate::{generate, CopyModel, DecodeConstraint, Profile};
pub use paraphrase::{watermark_paraphrase, watermark_paraphrase_locked};

use crate::error::{Error, Result};
use crate::hashing::{derive, hash_tokens, mix64};
use crate::textcore::{Token, Vocabulary};
use crate::watermark::WatermarkParams;

/// Context tokens that determine the preference set.
pub const PREFERENCE_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub model_seed: u64,
    pub temperature: f64,
    /// Background logits lie in `[0, spread)`.
    #[serde(default = "LmParams::default_spread")]
    pub spread: f64,
    /// Logit boost of context-preferred tokens.
    #[serde(default = "LmParams::default_boost")]
    pub boost: f64,
    /// Size of the preference set drawn per context.
    #[serde(default = "LmParams::default_preferred")]
    pub preferred: usize,
}

impl LmParams {
    fn default_spread() -> f64 {
        3.0
    }
    fn default_boost() -> f64 {
        6.0
    }
    fn default_preferred() -> usize {
        16
    }

    pub fn new(model_seed: u64) -> Self {
        Self {
            model_seed,
            temperature: 1.0,
            spread: Self::default_spread(),
            boost: Self::default_boost(),
            preferred: Self::default_preferred(),
        }
    }

    /// A model whose logits are identically zero.
    pub fn uniform(model_seed: u64) -> Self {
        Self {
            spread: 0.0,
            boost: 0.0,
            preferred: 0,
            ..Self::new(model_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.spread >= 0.0 && self.boost >= 0.0) {
            return Err(Error::config("spread and boost must be non-negative"));
        }
        Ok(())
    }
}

/// A toy LM instance with its precomputed background distribution.
#[derive(Debug, Clone)]
pub struct ToyLm {
    params: LmParams,
    vocab: Vocabulary,
    background: Vec<f64>,
    /// `exp(background / T)`.
    weights: Vec<f64>,
    total_weight: f64,
    /// `sum exp(background)` at unit temperature.
    z_unit: f64,
    alias: WeightedAliasIndex<f64>,
}

/// Per-step modifications to the base distribution.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepBias<'a> {
    /// Watermark bias with the `h` most recent tokens.
    pub watermark: Option<(&'a WatermarkParams, &'a [Token])>,
    /// Extra unnormalized mass added to one token before watermark biasing.
    pub anchor: Option<(Token, f64)>,
    /// Tokens that must not be emitted.
    pub forbidden: &'a [Token],
}

const MAX_REJECTIONS: usize = 10_000;

impl ToyLm {
    pub fn new(params: LmParams, vocab: Vocabulary) -> Result<Self> {
        params.validate()?;
        let background: Vec<f64> = (0..vocab.size())
            .map(|i| {
                let u = (mix64(derive(params.model_seed, u64::from(i))) >> 11) as f64 / (1u64 << 53) as f64;
                params.spread * u
            })
            .collect();
        let weights: Vec<f64> = background.iter().map(|b| (b / params.temperature).exp()).collect();
        let total_weight = weights.iter().sum();
        let z_unit = background.iter().map(|b| b.exp()).sum();
        let alias = WeightedAliasIndex::new(weights.clone())
            .map_err(|e| Error::contract(format!("background weights rejected: {e}")))?;
        Ok(Self {
            params,
            vocab,
            background,
            weights,
            total_weight,
            z_unit,
            alias,
        })
    }

    pub fn params(&self) -> &LmParams {
        &self.params
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    /// Distinct preferred tokens for the trailing window of `context`.
    pub fn preferences(&self, context: &[Token]) -> Vec<Token> {
        let window = &context[context.len().saturating_sub(PREFERENCE_WINDOW)..];
        let seed = hash_tokens(self.params.model_seed, window);
        let mut prefs = Vec::with_capacity(self.params.preferred);
        for j in 0..self.params.preferred as u64 {
            let t = (mix64(seed.wrapping_add(j.wrapping_mul(0x9e37_79b9_7f4a_7c15))) % u64::from(self.vocab.size()))
                as Token;
            if !prefs.contains(&t) {
                prefs.push(t);
            }
        }
        prefs
    }

    /// Full logit vector for `context`.
    pub fn base_logits(&self, context: &[Token]) -> Vec<f64> {
        let mut logits = self.background.clone();
        for p in self.preferences(context) {
            logits[p as usize] += self.params.boost;
        }
        logits
    }

    /// Sum of temperature-scaled weights of the unmodified distribution.
    pub(crate) fn context_mass(&self, prefs: &[Token]) -> f64 {
        let lift = (self.params.boost / self.params.temperature).exp() - 1.0;
        self.total_weight + prefs.iter().map(|&p| self.weights[p as usize] * lift).sum::<f64>()
    }

    /// `ln P(token | context)` under `softmax(base_logits)` at unit temperature.
    pub fn log_prob(&self, context: &[Token], token: Token) -> f64 {
        let prefs = self.preferences(context);
        let lift = self.params.boost.exp() - 1.0;
        let z = self.z_unit
            + prefs
                .iter()
                .map(|&p| self.background[p as usize].exp() * lift)
                .sum::<f64>();
        let logit = self.background[token as usize] + if prefs.contains(&token) { self.params.boost } else { 0.0 };
        logit - z.ln()
    }

    /// One draw from `softmax(base_logits / T)` with `bias` applied.
    pub(crate) fn sample<R: Rng + ?Sized>(&self, context: &[Token], bias: StepBias<'_>, rng: &mut R) -> Token {
        let t = self.params.temperature;
        let prefs = self.preferences(context);
        let pref_lift = (self.params.boost / t).exp();
        let (green_lift, wm) = match bias.watermark {
            Some((p, ctx)) if ctx.len() == p.h && p.delta > 0.0 => {
                ((p.delta / t).exp(), Some(p.green_list_unchecked(ctx, self.vocab)))
            }
            _ => (1.0, None),
        };
        let is_green = |tok: Token| wm.as_ref().is_some_and(|g| g.contains(tok));

        // Exact weights of the special tokens.
        let mut special: Vec<(Token, f64)> = Vec::with_capacity(prefs.len() + 1);
        for &p in &prefs {
            special.push((p, self.weights[p as usize] * pref_lift));
        }
        if let Some((a, extra)) = bias.anchor {
            match special.iter_mut().find(|(tok, _)| *tok == a) {
                Some(entry) => entry.1 += extra,
                None => special.push((a, self.weights[a as usize] + extra)),
            }
        }
        for (tok, w) in special.iter_mut() {
            if bias.forbidden.contains(tok) {
                *w = 0.0;
            } else if is_green(*tok) {
                *w *= green_lift;
            }
        }
        let special_mass: f64 = special.iter().map(|(_, w)| w).sum();
        // Envelope of the alias proposal; draws landing on special or
        // forbidden tokens are rejected.
        let rest_mass = green_lift * self.total_weight;
        let total = special_mass + rest_mass;

        if total > 0.0 {
            for _ in 0..MAX_REJECTIONS {
                let u = rng.random::<f64>() * total;
                if u < special_mass {
                    let mut acc = 0.0;
                    for &(tok, w) in &special {
                        acc += w;
                        if u < acc {
                            return tok;
                        }
                    }
                    // Rounding at the top of the range.
                    if let Some(&(tok, _)) = special.iter().rev().find(|(_, w)| *w > 0.0) {
                        return tok;
                    }
                    continue;
                }
                let cand = self.alias.sample(rng) as Token;
                if special.iter().any(|(tok, _)| *tok == cand) || bias.forbidden.contains(&cand) {
                    continue;
                }
                let accept = if is_green(cand) { 1.0 } else { 1.0 / green_lift };
                if accept >= 1.0 || rng.random::<f64>() < accept {
                    return cand;
                }
            }
        }
        self.sample_exhaustive(context, bias, rng)
    }

    /// O(|V|) fallback with identical semantics. If every token is masked,
    /// returns the highest base logit, which is deterministic.
    fn sample_exhaustive<R: Rng + ?Sized>(&self, context: &[Token], bias: StepBias<'_>, rng: &mut R) -> Token {
        let t = self.params.temperature;
        let mut logits = self.base_logits(context);
        let base = logits.clone();
        if let Some((a, extra)) = bias.anchor {
            let w = (logits[a as usize] / t).exp() + extra;
            logits[a as usize] = t * w.ln();
        }
        if let Some((p, ctx)) = bias.watermark {
            if ctx.len() == p.h {
                let list = p.green_list_unchecked(ctx, self.vocab);
                for id in list.members() {
                    logits[id as usize] += p.delta;
                }
            }
        }
        for &f in bias.forbidden {
            logits[f as usize] = f64::NEG_INFINITY;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return argmax(&base);
        }
        let w: Vec<f64> = logits.iter().map(|l| ((l - max) / t).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return i as Token;
            }
            u -= wi;
        }
        argmax(&logits)
    }

    /// Deterministic most-likely next token.
    pub fn greedy(&self, context: &[Token]) -> Token {
        argmax(&self.base_logits(context))
    }
}

fn argmax(v: &[f64]) -> Token {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best as Token
}

/// `exp` of the mean negative log-probability of `seq[1..]` given its prefix.
pub fn perplexity(seq: &[Token], lm: &ToyLm) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::contract("perplexity needs at least two tokens"));
    }
    lm.vocab().validate(seq)?;
    let nll: f64 = (1..seq.len()).map(|t| -lm.log_prob(&seq[..t], seq[t])).sum();
    Ok((nll / (seq.len() - 1) as f64).exp())
}

#[cfg(test)]
mod tests;
