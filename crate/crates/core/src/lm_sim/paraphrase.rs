//! Watermarked rewriting of owner documents.
//!
//! At each position the original token receives extra probability mass
//! `A = Z * f / (1 - f)`, where `Z` is the unmodified context mass and `f` the
//! fidelity, so without a watermark the original is kept with probability at
//! least `f`. The watermark bias then shifts mass toward green tokens, which
//! flips a delta-dependent share of red originals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{StepBias, ToyLm};
use crate::error::{Error, Result};
use crate::textcore::{Token, TokenSeq};
use crate::watermark::WatermarkParams;

/// Rewrites `doc` token by token with the watermarked toy LM.
pub fn watermark_paraphrase(
    doc: &[Token],
    lm: &ToyLm,
    wm: &WatermarkParams,
    fidelity: f64,
    rng_seed: u64,
) -> Result<TokenSeq> {
    watermark_paraphrase_locked(doc, lm, wm, fidelity, &[], rng_seed)
}

/// As [`watermark_paraphrase`], but positions with `locked[i] == true` are
/// copied verbatim. An empty mask locks nothing.
pub fn watermark_paraphrase_locked(
    doc: &[Token],
    lm: &ToyLm,
    wm: &WatermarkParams,
    fidelity: f64,
    locked: &[bool],
    rng_seed: u64,
) -> Result<TokenSeq> {
    wm.validate(lm.vocab())?;
    if doc.len() < wm.h + 1 {
        return Err(Error::contract(format!(
            "document has {} tokens, paraphrase needs at least h+1 = {}",
            doc.len(),
            wm.h + 1
        )));
    }
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::contract(format!("fidelity must lie in [0,1], got {fidelity}")));
    }
    if !locked.is_empty() && locked.len() != doc.len() {
        return Err(Error::contract("lock mask length differs from document length"));
    }
    lm.vocab().validate(doc)?;
    if fidelity >= 1.0 {
        return Ok(doc.to_vec());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out: TokenSeq = Vec::with_capacity(doc.len());
    for (i, &original) in doc.iter().enumerate() {
        if locked.get(i).copied().unwrap_or(false) {
            out.push(original);
            continue;
        }
        let prefs = lm.preferences(&out);
        let extra = lm.context_mass(&prefs) * fidelity / (1.0 - fidelity);
        let bias = StepBias {
            watermark: (out.len() >= wm.h).then(|| (wm, &out[out.len() - wm.h..])),
            anchor: (extra > 0.0).then_some((original, extra)),
            forbidden: &[],
        };
        let t = lm.sample(&out, bias, &mut rng);
        out.push(t);
    }
    Ok(out)
}
