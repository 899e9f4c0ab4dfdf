//! Membership-inference baselines aggregated into dataset decisions.
//!
//! Each baseline scores one owner document with 0 or 1; a dataset score is
//! the mean over documents, and the dataset is declared IN when its score
//! exceeds the midpoint of the mean scores of a known-IN and a known-OUT
//! training instantiation. The instruction-following sub-steps of the
//! original methods are replaced with the simulator's primitives:
//!
//! * ACC-FACTS asks about one additional fact and counts the question
//!   answered when at least 60% of the fact's tokens reappear in order
//!   within a window of twice the fact length.
//! * SIB continues a 32-token prefix and thresholds TF-IDF cosine to the
//!   document and toy-LM perplexity of the response.
//! * IBM sends a membership probe and reads a yes/no reply.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ask_with_retry, AskFn, OwnerData, QUERY_SALIENT, SALIENT_POOL};
use crate::error::{Error, Result};
use crate::hashing::{derive, derive_str};
use crate::lm_sim::{perplexity, ToyLm};
use crate::rag::{yes_reply, Query, QueryKind, TfIdf};
use crate::textcore::{Token, TokenSeq};

/// Share of a fact's tokens that must reappear for it to count as answered.
pub const ACCFACTS_COVERAGE: f64 = 0.6;
/// Prefix length of SIB continuation and IBM probe queries.
pub const SIB_PREFIX: usize = 32;
/// Points per axis of the SIB threshold grid.
pub const GRID_POINTS: usize = 21;

/// Dataset-level membership score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiScore {
    pub per_doc: Vec<(String, u8)>,
    pub mean: f64,
}

impl MiScore {
    pub fn from_per_doc(per_doc: Vec<(String, u8)>) -> Self {
        let mean = if per_doc.is_empty() {
            0.0
        } else {
            per_doc.iter().map(|(_, v)| f64::from(*v)).sum::<f64>() / per_doc.len() as f64
        };
        Self { per_doc, mean }
    }
}

/// Midpoint of the mean IN and mean OUT training scores.
pub fn di_threshold(train_in_scores: &[f64], train_out_scores: &[f64]) -> Result<f64> {
    if train_in_scores.is_empty() || train_out_scores.is_empty() {
        return Err(Error::contract("threshold calibration needs IN and OUT scores"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(train_in_scores) + mean(train_out_scores)))
}

/// Length of the longest common subsequence.
fn lcs(a: &[Token], b: &[Token]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Whether at least `ACCFACTS_COVERAGE` of `fact` appears in order inside
/// some window of `2 * |fact|` response tokens.
pub fn covers_fact(response: &[Token], fact: &[Token]) -> bool {
    if fact.is_empty() {
        return true;
    }
    let need = (ACCFACTS_COVERAGE * fact.len() as f64).ceil() as usize;
    let width = (2 * fact.len()).min(response.len());
    if width == 0 {
        return false;
    }
    response.windows(width).any(|w| lcs(fact, w) >= need)
}

/// The ACC-FACTS question for owner document `i` and the fact it targets.
pub fn accfacts_question(owner: &OwnerData, i: usize, seed: u64) -> Option<(Query, TokenSeq)> {
    let d = &owner.docs[i];
    let mut rng = ChaCha8Rng::seed_from_u64(derive(derive_str(seed, "accfacts"), i as u64));
    let fact = d
        .additional_facts
        .choose(&mut rng)
        .or_else(|| d.key_facts.choose(&mut rng))?
        .clone();
    let pool = owner.salient_tokens(i, SALIENT_POOL);
    let mut tokens = fact.clone();
    tokens.extend(pool.choose_multiple(&mut rng, QUERY_SALIENT).copied());
    Some((Query::question(d.doc.doc_id.clone(), tokens), fact))
}

/// 1 if the system's answer to the ACC-FACTS question reproduces its fact.
pub fn mi_accfacts(owner: &OwnerData, i: usize, ask: &AskFn<'_>, seed: u64) -> u8 {
    let Some((query, fact)) = accfacts_question(owner, i, seed) else {
        return 0;
    };
    match ask_with_retry(ask, &query) {
        Some(r) => u8::from(covers_fact(&r, &fact)),
        None => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SibScores {
    pub similarity: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SibThresholds {
    pub similarity: f64,
    pub perplexity: f64,
}

/// Similarity and perplexity of the system's continuation of `doc`'s prefix.
pub fn sib_scores(
    doc: &[Token],
    target_doc_id: &str,
    ask: &AskFn<'_>,
    aux: &ToyLm,
    idf: &TfIdf,
) -> Result<Option<SibScores>> {
    if doc.len() < 2 * SIB_PREFIX {
        return Err(Error::contract(format!(
            "document needs at least {} tokens",
            2 * SIB_PREFIX
        )));
    }
    let query = Query {
        target_doc_id: target_doc_id.to_string(),
        tokens: doc[..SIB_PREFIX].to_vec(),
        kind: QueryKind::Continuation,
    };
    let Some(response) = ask_with_retry(ask, &query) else {
        return Ok(None);
    };
    if response.len() < 2 {
        return Ok(None);
    }
    Ok(Some(SibScores {
        similarity: idf.cosine(doc, &response),
        perplexity: perplexity(&response, aux)?,
    }))
}

/// 1 iff similarity exceeds and perplexity stays below the thresholds.
pub fn mi_sib(scores: Option<SibScores>, t: &SibThresholds) -> u8 {
    scores.map_or(0, |s| {
        u8::from(s.similarity > t.similarity && s.perplexity < t.perplexity)
    })
}

/// `points` evenly spaced values over `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Per-document accuracy of `t` on labeled scores.
pub fn sib_accuracy(members: &[Option<SibScores>], non_members: &[Option<SibScores>], t: &SibThresholds) -> f64 {
    let total = members.len() + non_members.len();
    if total == 0 {
        return 0.0;
    }
    let hits = members.iter().filter(|s| mi_sib(**s, t) == 1).count()
        + non_members.iter().filter(|s| mi_sib(**s, t) == 0).count();
    hits as f64 / total as f64
}

/// The 21x21 threshold grid spanning the observed score ranges.
pub fn sib_grid(scores: &[Option<SibScores>]) -> Vec<SibThresholds> {
    let seen: Vec<SibScores> = scores.iter().flatten().copied().collect();
    let range = |f: fn(&SibScores) -> f64| {
        seen.iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (slo, shi) = range(|s| s.similarity);
    let (plo, phi) = range(|s| s.perplexity);
    if seen.is_empty() {
        return vec![SibThresholds {
            similarity: 0.0,
            perplexity: f64::INFINITY,
        }];
    }
    let mut out = Vec::with_capacity(GRID_POINTS * GRID_POINTS);
    for &similarity in &grid(slo, shi, GRID_POINTS) {
        // The top perplexity point sits just above the maximum so the strict
        // `<` test can accept every observed response.
        let mut ppl = grid(plo, phi, GRID_POINTS);
        if let Some(last) = ppl.last_mut() {
            *last = last.next_up();
        }
        for &perplexity in &ppl {
            out.push(SibThresholds { similarity, perplexity });
        }
    }
    out
}

/// Grid search for the thresholds with the best training accuracy; the
/// first grid point wins ties.
pub fn fit_sib(members: &[Option<SibScores>], non_members: &[Option<SibScores>]) -> SibThresholds {
    let all: Vec<Option<SibScores>> = members.iter().chain(non_members).copied().collect();
    let mut best = None;
    let mut best_acc = f64::NEG_INFINITY;
    for t in sib_grid(&all) {
        let acc = sib_accuracy(members, non_members, &t);
        if acc > best_acc {
            best_acc = acc;
            best = Some(t);
        }
    }
    best.unwrap_or(SibThresholds {
        similarity: 0.0,
        perplexity: f64::INFINITY,
    })
}

/// 1 if the system affirms that `doc`'s prefix is in its context.
pub fn mi_ibm(doc: &[Token], target_doc_id: &str, ask: &AskFn<'_>, vocab: crate::textcore::Vocabulary) -> u8 {
    let query = Query {
        target_doc_id: target_doc_id.to_string(),
        tokens: doc[..SIB_PREFIX.min(doc.len())].to_vec(),
        kind: QueryKind::MembershipProbe,
    };
    match ask_with_retry(ask, &query) {
        Some(r) => u8::from(r == yes_reply(vocab)),
        None => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_threshold() {
        assert_eq!(di_threshold(&[1.0], &[0.0]).unwrap(), 0.5);
        assert!((di_threshold(&[0.8, 0.8], &[0.2, 0.4]).unwrap() - 0.55).abs() < 1e-12);
        assert!(di_threshold(&[], &[0.1]).is_err());
        assert!(di_threshold(&[0.1], &[]).is_err());
    }

    #[test]
    fn lcs_by_hand() {
        assert_eq!(lcs(&[1, 2, 3, 4], &[1, 3, 4]), 3);
        assert_eq!(lcs(&[1, 2, 3], &[3, 2, 1]), 1);
        assert_eq!(lcs(&[], &[1]), 0);
    }

    #[test]
    fn fact_coverage_needs_order_and_locality() {
        let fact = [10, 11, 12, 13, 14];
        // 3 of 5 in order inside a 10-token window.
        assert!(covers_fact(&[1, 10, 2, 12, 3, 14, 4], &fact));
        // Only 2 of 5.
        assert!(!covers_fact(&[10, 1, 1, 1, 14], &fact));
        // Out of order.
        assert!(!covers_fact(&[14, 13, 12, 11, 10], &fact));
        // Spread wider than the window.
        let mut spread = vec![10];
        spread.extend([0; 12]);
        spread.extend([12, 14]);
        assert!(!covers_fact(&spread, &fact));
        assert!(covers_fact(&[9, 9, 10, 11, 12, 13, 14, 9], &fact));
    }

    #[test]
    fn grid_spans_range() {
        let g = grid(0.0, 1.0, 21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
        assert!((g[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn unattainable_similarity_never_fires() {
        let t = SibThresholds {
            similarity: 1.01,
            perplexity: f64::INFINITY,
        };
        let s = SibScores {
            similarity: 1.0,
            perplexity: 1.0,
        };
        assert_eq!(mi_sib(Some(s), &t), 0);
        assert_eq!(mi_sib(None, &t), 0);
    }

    #[test]
    fn mi_score_mean() {
        let s = MiScore::from_per_doc(vec![("#0001a".into(), 1), ("#0002a".into(), 0), ("#0003a".into(), 1)]);
        assert!((s.mean - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fit_separates_separable_scores() {
        let mk = |s, p| {
            Some(SibScores {
                similarity: s,
                perplexity: p,
            })
        };
        let members = [mk(0.9, 10.0), mk(0.8, 12.0)];
        let non = [mk(0.1, 10.0), mk(0.2, 11.0)];
        let t = fit_sib(&members, &non);
        assert_eq!(sib_accuracy(&members, &non, &t), 1.0);
    }
}
