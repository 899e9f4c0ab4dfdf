//! Context-copying generation with optional MemFree n-gram blocking.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::{StepBias, ToyLm};
use crate::error::{Error, Result};
use crate::textcore::{Token, TokenSeq};
use crate::watermark::WatermarkParams;

/// How often and how much the responder regurgitates retrieved context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopyModel {
    /// Probability that a free step starts a copy span.
    pub copy_rate: f64,
    /// Mean of the geometric span length.
    pub mean_span: f64,
    /// Probability the span comes from the top-ranked document.
    pub source_bias: f64,
}

impl CopyModel {
    pub const fn naive() -> Self {
        Self {
            copy_rate: 0.35,
            mean_span: 12.0,
            source_bias: 0.8,
        }
    }

    pub const fn def() -> Self {
        Self {
            copy_rate: 0.15,
            mean_span: 5.0,
            source_bias: 0.8,
        }
    }

    /// Never copies.
    pub const fn none() -> Self {
        Self {
            copy_rate: 0.0,
            mean_span: 1.0,
            source_bias: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.copy_rate) || !unit(self.source_bias) {
            return Err(Error::config("copy_rate and source_bias must lie in [0,1]"));
        }
        if !(self.mean_span >= 1.0 && self.mean_span.is_finite()) {
            return Err(Error::config(format!("mean_span must be >= 1, got {}", self.mean_span)));
        }
        Ok(())
    }
}

impl Default for CopyModel {
    fn default() -> Self {
        Self::naive()
    }
}

/// Responder system-prompt profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Profile {
    /// No defensive instructions.
    #[default]
    Naive,
    /// Instructed not to reproduce or reveal its context.
    Def,
}

impl Profile {
    pub const ALL: [Profile; 2] = [Profile::Naive, Profile::Def];

    pub fn copy_model(self) -> CopyModel {
        match self {
            Profile::Naive => CopyModel::naive(),
            Profile::Def => CopyModel::def(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Profile::Naive => "NAIVE",
            Profile::Def => "DEF",
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Profile::Naive),
            "def" => Ok(Profile::Def),
            other => Err(Error::config(format!(
                "unknown profile {other:?} (expected naive or def)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeConstraint {
    /// Forbid emitting any `n`-gram that occurs in a retrieved document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memfree_n: Option<usize>,
}

impl DecodeConstraint {
    pub fn memfree(n: usize) -> Self {
        Self { memfree_n: Some(n) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.memfree_n {
            Some(n) if n < 2 => Err(Error::config(format!("memfree_n must be >= 2, got {n}"))),
            _ => Ok(()),
        }
    }
}

/// Next tokens that would complete a forbidden n-gram, keyed by the
/// preceding `n-1` tokens.
struct NgramBlocklist<'a> {
    prefix: usize,
    next: HashMap<&'a [Token], Vec<Token>>,
}

impl<'a> NgramBlocklist<'a> {
    fn new<S: AsRef<[Token]>>(n: usize, docs: &'a [S]) -> Self {
        let mut next: HashMap<&'a [Token], Vec<Token>> = HashMap::new();
        for doc in docs {
            for w in doc.as_ref().windows(n) {
                let entry = next.entry(&w[..n - 1]).or_default();
                if !entry.contains(&w[n - 1]) {
                    entry.push(w[n - 1]);
                }
            }
        }
        Self { prefix: n - 1, next }
    }

    fn forbidden(&self, output: &[Token]) -> &[Token] {
        if output.len() < self.prefix {
            return &[];
        }
        self.next
            .get(&output[output.len() - self.prefix..])
            .map_or(&[], Vec::as_slice)
    }
}

struct CopySpan {
    doc: usize,
    pos: usize,
    remaining: u64,
}

/// Where a fresh copy span starts inside `doc`. Prefers continuing after an
/// occurrence of the most recent token, then restarting at an occurrence of
/// any prompt token, then a uniformly random position.
fn copy_start<R: Rng + ?Sized>(doc: &[Token], last: Option<Token>, prompt: &[Token], rng: &mut R) -> usize {
    if let Some(last) = last {
        let after: Vec<usize> = (0..doc.len().saturating_sub(1))
            .filter(|&i| doc[i] == last)
            .map(|i| i + 1)
            .collect();
        if !after.is_empty() {
            return after[rng.random_range(0..after.len())];
        }
    }
    let hits: Vec<usize> = (0..doc.len()).filter(|&i| prompt.contains(&doc[i])).collect();
    if !hits.is_empty() {
        return hits[rng.random_range(0..hits.len())];
    }
    rng.random_range(0..doc.len())
}

/// Autoregressive response of `length` tokens to `prompt` given `retrieved`
/// context, fully determined by `rng_seed`.
///
/// Free steps sample the toy LM (watermark-biased only if `wm` is given);
/// with probability `copy_rate` a step instead starts a geometric-length copy
/// span from a retrieved document. Under MemFree a copied token that would
/// complete a blocked n-gram ends the span and is re-drawn with the blocked
/// tokens masked, so the output shares no n-gram with any retrieved document.
#[allow(clippy::too_many_arguments)]
pub fn generate<S: AsRef<[Token]>>(
    prompt: &[Token],
    retrieved: &[S],
    length: usize,
    lm: &ToyLm,
    copy: &CopyModel,
    wm: Option<&WatermarkParams>,
    constraint: &DecodeConstraint,
    rng_seed: u64,
) -> Result<TokenSeq> {
    if length == 0 {
        return Err(Error::contract("response length must be >= 1"));
    }
    copy.validate()?;
    constraint.validate()?;
    if let Some(p) = wm {
        p.validate(lm.vocab())?;
    }
    lm.vocab().validate(prompt)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let docs: Vec<&[Token]> = retrieved.iter().map(AsRef::as_ref).filter(|d| !d.is_empty()).collect();
    let blocklist = constraint.memfree_n.map(|n| NgramBlocklist::new(n, &docs));
    let span_len = Geometric::new(1.0 / copy.mean_span).map_err(|e| Error::config(e.to_string()))?;

    // Prompt followed by the output; the output starts at `prompt.len()`.
    let mut text: TokenSeq = Vec::with_capacity(prompt.len() + length);
    text.extend_from_slice(prompt);
    let mut span: Option<CopySpan> = None;
    // Where the last span stopped for lack of length; a new span on the same
    // document picks up there if nothing was emitted in between.
    let mut resume: Option<(usize, usize)> = None;

    for _ in 0..length {
        let out = &text[prompt.len()..];
        let forbidden = blocklist.as_ref().map_or(&[][..], |b| b.forbidden(out));

        if span
            .as_ref()
            .is_none_or(|s| s.remaining == 0 || s.pos >= docs[s.doc].len())
            && !docs.is_empty()
            && copy.copy_rate > 0.0
            && rng.random::<f64>() < copy.copy_rate
        {
            let doc = if docs.len() == 1 || rng.random::<f64>() < copy.source_bias {
                0
            } else {
                rng.random_range(0..docs.len())
            };
            let pos = match resume {
                Some((d, p)) if d == doc => p,
                _ => copy_start(docs[doc], text.last().copied(), prompt, &mut rng),
            };
            span = Some(CopySpan {
                doc,
                pos,
                remaining: 1 + span_len.sample(&mut rng),
            });
        }

        let copied = match span.as_mut() {
            Some(s) if s.remaining > 0 && s.pos < docs[s.doc].len() => {
                let t = docs[s.doc][s.pos];
                if forbidden.contains(&t) {
                    span = None;
                    None
                } else {
                    s.pos += 1;
                    s.remaining -= 1;
                    resume = (s.remaining == 0 && s.pos < docs[s.doc].len()).then_some((s.doc, s.pos));
                    Some(t)
                }
            }
            _ => {
                span = None;
                None
            }
        };

        let token = match copied {
            Some(t) => t,
            None => {
                resume = None;
                let bias = StepBias {
                    watermark: wm.filter(|p| text.len() >= p.h).map(|p| (p, &text[text.len() - p.h..])),
                    anchor: None,
                    forbidden,
                };
                lm.sample(&text, bias, &mut rng)
            }
        };
        text.push(token);
    }
    Ok(text.split_off(prompt.len()))
}
