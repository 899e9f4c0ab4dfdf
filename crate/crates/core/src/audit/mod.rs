//! The data owner's side: query generation, the watermark audit with its
//! statistical guarantee, membership-inference baselines and the
//! partial-inclusion harness.
//!
//! The auditor reaches the RAG system only through an [`AskFn`]; nothing in
//! this module can see the corpus being audited.

pub mod baselines;

use std::collections::HashSet;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{
    accfacts_question, covers_fact, di_threshold, fit_sib, grid, mi_accfacts, mi_ibm, mi_sib, sib_accuracy, sib_grid,
    sib_scores, MiScore, SibScores, SibThresholds, ACCFACTS_COVERAGE, GRID_POINTS, SIB_PREFIX,
};

use crate::corpus::{Document, ExperimentSplit};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::{derive, derive_str};
use crate::rag::{AskError, Query, TfIdf};
use crate::textcore::{Token, TokenSeq, Vocabulary};
use crate::watermark::{log10_p_value, score_text, DedupState, ScoreResult, WatermarkParams};

/// The auditor's only view of the system under audit.
pub type AskFn<'a> = dyn Fn(&Query) -> std::result::Result<TokenSeq, AskError> + Sync + 'a;

/// Fact phrases per query.
pub const QUERY_FACTS: usize = 2;
/// Salient tokens per query.
pub const QUERY_SALIENT: usize = 10;
/// Candidate pool of salient tokens per document.
pub const SALIENT_POOL: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Decision threshold on `log10 p`.
    #[serde(default = "AuditConfig::default_alpha_log10")]
    pub alpha_log10: f64,
    #[serde(default = "AuditConfig::default_qpd")]
    pub qpd: usize,
    #[serde(default = "AuditConfig::default_max_queries")]
    pub max_queries: usize,
    /// Seeds query construction and order.
    #[serde(default)]
    pub seed: u64,
}

impl AuditConfig {
    fn default_alpha_log10() -> f64 {
        log10_p_value(4.0)
    }
    fn default_qpd() -> usize {
        1
    }
    fn default_max_queries() -> usize {
        100
    }

    pub fn validate(&self) -> Result<()> {
        if self.qpd == 0 {
            return Err(Error::config("qpd must be >= 1"));
        }
        if self.alpha_log10.is_nan() || self.alpha_log10 >= 0.0 {
            return Err(Error::config(format!(
                "alpha_log10 must be negative, got {}",
                self.alpha_log10
            )));
        }
        Ok(())
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            alpha_log10: Self::default_alpha_log10(),
            qpd: Self::default_qpd(),
            max_queries: Self::default_max_queries(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    In,
    Out,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::In => "IN",
            Decision::Out => "OUT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 1-based index of the response in folding order.
    pub n: usize,
    pub green: u64,
    pub scored: u64,
    pub z: Option<f64>,
    pub log10_p: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub decision: Decision,
    #[serde(rename = "final")]
    pub final_score: ScoreResult,
    pub trace: Vec<TraceEntry>,
    pub config: AuditConfig,
    pub salt_fingerprint: String,
    pub queries_issued: usize,
    pub skipped: usize,
    /// First response count at which the running p-value crossed alpha.
    pub queries_to_decision: Option<usize>,
}

impl AuditReport {
    /// Trace as CSV with header `n,green,scored,z,log10_p`; `z` is empty
    /// before any token was scored.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("n,green,scored,z,log10_p\n");
        for e in &self.trace {
            let z = e.z.map(|z| format!("{z}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", e.n, e.green, e.scored, z, e.log10_p));
        }
        out
    }

    /// Cumulative z after `n` responses (the last entry if the trace is shorter).
    pub fn z_at(&self, n: usize) -> Option<f64> {
        self.trace.iter().take_while(|e| e.n <= n).last().and_then(|e| e.z)
    }
}

/// One owner document with the fact phrases its owner knows it contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerDoc {
    pub doc: Document,
    /// Included key facts.
    pub key_facts: Vec<TokenSeq>,
    /// Included additional facts.
    pub additional_facts: Vec<TokenSeq>,
}

impl OwnerDoc {
    pub fn facts(&self) -> impl Iterator<Item = &TokenSeq> {
        self.key_facts.iter().chain(&self.additional_facts)
    }
}

/// The owner's dataset: its documents and an IDF table fitted on them.
#[derive(Debug, Clone)]
pub struct OwnerData {
    pub docs: Vec<OwnerDoc>,
    idf: TfIdf,
}

impl OwnerData {
    pub fn new(docs: Vec<OwnerDoc>) -> Self {
        let idf = TfIdf::fit(&docs.iter().map(|d| &d.doc.tokens[..]).collect::<Vec<_>>());
        Self { docs, idf }
    }

    /// Owner view of `docs`, with fact phrases looked up in `split`'s groups.
    pub fn from_split(split: &ExperimentSplit, docs: &[Document]) -> Result<Self> {
        let owned = docs
            .iter()
            .map(|d| {
                let group = split
                    .group(d.group_id)
                    .ok_or_else(|| Error::Mismatch(format!("no group for owner document {}", d.doc_id)))?;
                let pick = |facts: &[crate::corpus::Fact]| {
                    facts
                        .iter()
                        .filter(|f| d.included_fact_ids.contains(&f.id))
                        .map(|f| f.tokens.clone())
                        .collect::<Vec<_>>()
                };
                Ok(OwnerDoc {
                    doc: d.clone(),
                    key_facts: pick(&group.key_facts),
                    additional_facts: pick(&group.additional_facts),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(owned))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self) -> &TfIdf {
        &self.idf
    }

    /// A seeded subset of `n` documents, keeping the IDF table.
    pub fn subset(&self, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_str(seed, "owner-subset"));
        let mut idx: Vec<usize> = (0..self.docs.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        Self {
            docs: idx.into_iter().map(|i| self.docs[i].clone()).collect(),
            idf: self.idf.clone(),
        }
    }

    /// Highest TF-IDF tokens of document `i` that are not part of its facts,
    /// best first; ties by token id.
    pub fn salient_tokens(&self, i: usize, limit: usize) -> Vec<Token> {
        let d = &self.docs[i];
        let fact_tokens: HashSet<Token> = d.facts().flatten().copied().collect();
        let mut weights: Vec<(Token, f64)> = self
            .idf
            .vectorize(&d.doc.tokens)
            .entries()
            .iter()
            .filter(|(t, _)| !fact_tokens.contains(t))
            .copied()
            .collect();
        weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        weights.into_iter().take(limit).map(|(t, _)| t).collect()
    }
}

/// `qpd` queries per owner document, each two fact phrases and ten salient
/// tokens, distinct within a document. Query construction never touches the
/// watermark key.
pub fn make_queries(owner: &OwnerData, qpd: usize, seed: u64) -> Vec<Query> {
    let mut out = Vec::with_capacity(owner.len() * qpd);
    for (i, d) in owner.docs.iter().enumerate() {
        let pool = owner.salient_tokens(i, SALIENT_POOL);
        let facts: Vec<&TokenSeq> = d.facts().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive(derive_str(seed, "queries"), i as u64));
        let mut seen: HashSet<TokenSeq> = HashSet::new();
        for _ in 0..qpd {
            let mut tokens = TokenSeq::new();
            for _attempt in 0..64 {
                let chosen_facts: Vec<&&TokenSeq> = facts.choose_multiple(&mut rng, QUERY_FACTS).collect();
                let chosen_salient: Vec<Token> = pool.choose_multiple(&mut rng, QUERY_SALIENT).copied().collect();
                let (head, tail) = chosen_salient.split_at(chosen_salient.len() / 2);
                tokens.clear();
                if let Some(f) = chosen_facts.first() {
                    tokens.extend_from_slice(f);
                }
                tokens.extend_from_slice(head);
                if let Some(f) = chosen_facts.get(1) {
                    tokens.extend_from_slice(f);
                }
                tokens.extend_from_slice(tail);
                if !seen.contains(&tokens) {
                    break;
                }
            }
            if tokens.is_empty() {
                // A document with neither facts nor weighted tokens.
                tokens = d.doc.tokens.iter().take(QUERY_SALIENT).copied().collect();
            }
            seen.insert(tokens.clone());
            out.push(Query::question(d.doc.doc_id.clone(), tokens));
        }
    }
    out
}

/// Sends `query`, retrying once on failure.
pub fn ask_with_retry(ask: &AskFn<'_>, query: &Query) -> Option<TokenSeq> {
    ask(query).or_else(|_| ask(query)).ok()
}

/// Watermark audit: queries the system about the owner's documents, folds
/// every response into one deduplicated green count in canonical query
/// order and rejects the null (dataset not in the corpus) when the joint
/// `log10 p` falls below `alpha_log10`.
pub fn ward_audit(
    owner: &OwnerData,
    ask: &AskFn<'_>,
    config: &AuditConfig,
    wm: &WatermarkParams,
    vocab: Vocabulary,
    exec: Exec,
) -> Result<AuditReport> {
    config.validate()?;
    wm.validate(vocab)?;
    let mut queries = make_queries(owner, config.qpd, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_str(config.seed, "query-order"));
    queries.shuffle(&mut rng);
    queries.truncate(config.max_queries);

    let responses = exec.map(&queries, |q| ask_with_retry(ask, q));

    let mut state = DedupState::new();
    let mut trace = Vec::with_capacity(responses.len());
    let mut skipped = 0;
    let mut queries_to_decision = None;
    for (i, r) in responses.iter().enumerate() {
        match r {
            Some(tokens) => {
                score_text(tokens, wm, vocab, Some(&mut state));
            }
            None => skipped += 1,
        }
        let s = state.totals(wm.gamma);
        if queries_to_decision.is_none() && s.log10_p < config.alpha_log10 {
            queries_to_decision = Some(i + 1);
        }
        trace.push(TraceEntry {
            n: i + 1,
            green: s.green_count,
            scored: s.scored_count,
            z: s.z,
            log10_p: s.log10_p,
            skipped: r.is_none(),
        });
    }
    let final_score = state.totals(wm.gamma);
    Ok(AuditReport {
        decision: if final_score.log10_p < config.alpha_log10 {
            Decision::In
        } else {
            Decision::Out
        },
        final_score,
        trace,
        config: *config,
        salt_fingerprint: wm.salt_fingerprint(),
        queries_issued: queries.len(),
        skipped,
        queries_to_decision,
    })
}

/// Removes a seeded `ceil(omega * |owner_in|)` subset of the owner's
/// documents from the corpus. The owner keeps auditing all of `owner_in`.
/// The removal sets are nested in `omega` for a fixed seed.
pub fn omega_harness(split: &ExperimentSplit, omega: f64, seed: u64) -> Result<ExperimentSplit> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::config(format!("omega must lie in [0,1], got {omega}")));
    }
    let n = split.owner_in.len();
    let remove = (omega * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_str(seed, "omega"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let gone: HashSet<&str> = order[..remove.min(n)]
        .iter()
        .map(|&i| split.owner_in[i].doc_id.as_str())
        .collect();
    let mut out = split.clone();
    out.corpus.retain(|d| !gone.contains(d.doc_id.as_str()));
    Ok(out)
}
