//! Red-green watermarking: green-list derivation, logit biasing, single and
//! joint detection, and the green-ratio planning bound.
//!
//! Detection statistic for `g` green tokens among `T` scored tokens:
//!
//! ```text
//! z = (g - gamma*T) / sqrt(gamma*(1-gamma)*T),   p = 1 - Phi(z)
//! ```
//!
//! Joint detection folds every response into one count with a shared
//! [`DedupState`], so a scoring window repeated anywhere in the response set
//! contributes evidence once.

mod prf;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use prf::{position_seed, KeyedPermutation, MAX_CONTEXT_WIDTH, POSITION_PRIMES};

use crate::error::{Error, Result};
use crate::stats;
use crate::textcore::{Token, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Prf {
    #[default]
    PositionPrf,
}

/// What counts as a duplicate scoring window during joint detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupKey {
    /// The `h` context tokens plus the scored token.
    #[default]
    ContextAndToken,
    /// The `h` context tokens alone; the first token seen after a context wins.
    ContextOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatermarkParams {
    pub gamma: f64,
    pub delta: f64,
    pub h: usize,
    pub salt: u64,
    #[serde(default)]
    pub prf: Prf,
    #[serde(default)]
    pub dedup: DedupKey,
}

impl WatermarkParams {
    pub const DEFAULT_GAMMA: f64 = 0.25;
    pub const DEFAULT_DELTA: f64 = 3.5;
    pub const DEFAULT_H: usize = 2;

    pub fn new(gamma: f64, delta: f64, h: usize, salt: u64) -> Self {
        Self {
            gamma,
            delta,
            h,
            salt,
            prf: Prf::PositionPrf,
            dedup: DedupKey::ContextAndToken,
        }
    }

    /// Paper-default scheme (gamma 0.25, delta 3.5, h 2) under `salt`.
    pub fn with_salt(salt: u64) -> Self {
        Self::new(Self::DEFAULT_GAMMA, Self::DEFAULT_DELTA, Self::DEFAULT_H, salt)
    }

    pub fn validate(&self, vocab: Vocabulary) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::config(format!(
                "delta must be finite and >= 0, got {}",
                self.delta
            )));
        }
        if self.h == 0 || self.h > MAX_CONTEXT_WIDTH {
            return Err(Error::config(format!(
                "context width h must lie in [1, {MAX_CONTEXT_WIDTH}], got {}",
                self.h
            )));
        }
        let g = green_size(self.gamma, vocab);
        if g < 1 || g >= vocab.size() {
            return Err(Error::config(format!(
                "round(gamma*|V|) = {g} must lie in [1, |V|-1] for |V| = {}",
                vocab.size()
            )));
        }
        Ok(())
    }

    /// Short public fingerprint of the secret salt, for config/corpus checks.
    pub fn salt_fingerprint(&self) -> String {
        format!(
            "{:016x}",
            crate::hashing::mix64(crate::hashing::derive_str(self.salt, "fingerprint"))
        )
    }

    /// Green list for one context window.
    pub fn green_list(&self, context: &[Token], vocab: Vocabulary) -> Result<GreenList> {
        if context.len() != self.h {
            return Err(Error::contract(format!(
                "context has {} tokens, watermark width is {}",
                context.len(),
                self.h
            )));
        }
        Ok(self.green_list_unchecked(context, vocab))
    }

    #[inline]
    pub(crate) fn green_list_unchecked(&self, context: &[Token], vocab: Vocabulary) -> GreenList {
        GreenList {
            perm: KeyedPermutation::new(position_seed(context, self.salt), vocab.size()),
            size: green_size(self.gamma, vocab),
        }
    }

    #[inline]
    pub(crate) fn is_green_unchecked(&self, context: &[Token], token: Token, vocab: Vocabulary) -> bool {
        self.green_list_unchecked(context, vocab).contains(token)
    }
}

/// `round(gamma * |V|)`.
pub fn green_size(gamma: f64, vocab: Vocabulary) -> u32 {
    (gamma * f64::from(vocab.size())).round() as u32
}

/// The green partition of one scoring window.
#[derive(Debug, Clone, Copy)]
pub struct GreenList {
    perm: KeyedPermutation,
    size: u32,
}

impl GreenList {
    #[inline]
    pub fn contains(&self, token: Token) -> bool {
        self.perm.inverse(token) < self.size
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Green identifiers in permutation order.
    pub fn members(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.size).map(|i| self.perm.forward(i))
    }
}

/// Green identifiers for `context`, sorted ascending.
pub fn green_mask(context: &[Token], params: &WatermarkParams, vocab: Vocabulary) -> Result<Vec<Token>> {
    let list = params.green_list(context, vocab)?;
    let mut ids: Vec<Token> = list.members().collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Adds `delta` to the logits of green tokens. Input is left untouched.
pub fn apply_bias(logits: &[f64], context: &[Token], params: &WatermarkParams, vocab: Vocabulary) -> Result<Vec<f64>> {
    if logits.len() != vocab.size() as usize {
        return Err(Error::contract(format!(
            "logit vector has {} entries, vocabulary has {}",
            logits.len(),
            vocab.size()
        )));
    }
    let list = params.green_list(context, vocab)?;
    let mut out = logits.to_vec();
    for id in list.members() {
        out[id as usize] += params.delta;
    }
    Ok(out)
}

/// Detection z-score over `scored_count` tokens of which `green_count` are green.
pub fn z_score(green_count: u64, scored_count: u64, gamma: f64) -> Result<f64> {
    if scored_count == 0 {
        return Err(Error::EmptyEvidence);
    }
    if green_count > scored_count {
        return Err(Error::contract(format!(
            "green count {green_count} exceeds scored count {scored_count}"
        )));
    }
    let t = scored_count as f64;
    Ok((green_count as f64 - gamma * t) / (gamma * (1.0 - gamma) * t).sqrt())
}

/// `log10(1 - Phi(z))`.
pub fn log10_p_value(z: f64) -> f64 {
    stats::log10_upper_tail(z)
}

/// Outcome of single or joint detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    #[serde(rename = "green")]
    pub green_count: u64,
    #[serde(rename = "scored")]
    pub scored_count: u64,
    /// `None` when nothing was scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    pub log10_p: f64,
}

impl ScoreResult {
    pub fn no_evidence() -> Self {
        Self {
            green_count: 0,
            scored_count: 0,
            z: None,
            log10_p: 0.0,
        }
    }

    pub fn from_counts(green_count: u64, scored_count: u64, gamma: f64) -> Self {
        match z_score(green_count, scored_count, gamma) {
            Ok(z) => Self {
                green_count,
                scored_count,
                z: Some(z),
                log10_p: log10_p_value(z),
            },
            Err(_) => Self::no_evidence(),
        }
    }

    pub fn has_evidence(&self) -> bool {
        self.scored_count > 0
    }

    pub fn green_ratio(&self) -> Option<f64> {
        (self.scored_count > 0).then(|| self.green_count as f64 / self.scored_count as f64)
    }
}

/// Scoring windows already counted during a joint scan, with their outcome.
#[derive(Debug, Clone, Default)]
pub struct DedupState {
    seen: HashMap<Box<[Token]>, bool>,
    green: u64,
}

impl DedupState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, key: &[Token]) -> bool {
        self.seen.contains_key(key)
    }

    /// Records `key` with its outcome; false if it was already present.
    pub fn insert(&mut self, key: &[Token], green: bool) -> bool {
        if self.seen.contains_key(key) {
            return false;
        }
        self.seen.insert(key.into(), green);
        self.green += u64::from(green);
        true
    }

    /// Totals over every window ever recorded.
    pub fn totals(&self, gamma: f64) -> ScoreResult {
        ScoreResult::from_counts(self.green, self.seen.len() as u64, gamma)
    }

    /// Union of two partial scans. Associative and commutative under
    /// [`DedupKey::ContextAndToken`], where a key fully determines its outcome.
    pub fn merge(mut self, other: DedupState) -> DedupState {
        for (k, g) in other.seen {
            if let std::collections::hash_map::Entry::Vacant(e) = self.seen.entry(k) {
                e.insert(g);
                self.green += u64::from(g);
            }
        }
        self
    }
}

/// Scores one sequence. Positions `t >= h` are scored against the green list
/// of `seq[t-h..t]`; with `dedup` supplied, windows already seen are skipped
/// and new ones are recorded.
pub fn score_text(
    seq: &[Token],
    params: &WatermarkParams,
    vocab: Vocabulary,
    mut dedup: Option<&mut DedupState>,
) -> ScoreResult {
    let h = params.h;
    let (mut green, mut scored) = (0u64, 0u64);
    if seq.len() > h {
        for t in h..seq.len() {
            let context = &seq[t - h..t];
            let token = seq[t];
            if let Some(state) = dedup.as_deref_mut() {
                let key = match params.dedup {
                    DedupKey::ContextAndToken => &seq[t - h..=t],
                    DedupKey::ContextOnly => context,
                };
                if state.contains(key) {
                    continue;
                }
                let is_green = params.is_green_unchecked(context, token, vocab);
                state.insert(key, is_green);
                green += u64::from(is_green);
            } else {
                green += u64::from(params.is_green_unchecked(context, token, vocab));
            }
            scored += 1;
        }
    }
    ScoreResult::from_counts(green, scored, params.gamma)
}

/// Joint detection over a response set with one shared [`DedupState`].
pub fn score_joint<S: AsRef<[Token]>>(responses: &[S], params: &WatermarkParams, vocab: Vocabulary) -> ScoreResult {
    let mut state = DedupState::new();
    for r in responses {
        score_text(r.as_ref(), params, vocab, Some(&mut state));
    }
    state.totals(params.gamma)
}

/// Minimum green ratio over `total_tokens` scored tokens for which the
/// detector rejects at level `alpha`:
/// `Phi^-1(1-alpha) * sqrt(gamma*(1-gamma)/total) + gamma`.
pub fn required_green_ratio(alpha: f64, gamma: f64, total_tokens: u64) -> Result<f64> {
    if total_tokens == 0 {
        return Err(Error::contract("total token count must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let z = stats::normal_quantile(1.0 - alpha);
    Ok(z * (gamma * (1.0 - gamma) / total_tokens as f64).sqrt() + gamma)
}

/// Same bound with the threshold given directly as a z-score.
pub fn required_green_ratio_for_z(z: f64, gamma: f64, total_tokens: u64) -> Result<f64> {
    if total_tokens == 0 {
        return Err(Error::contract("total token count must be positive"));
    }
    Ok(z * (gamma * (1.0 - gamma) / total_tokens as f64).sqrt() + gamma)
}
