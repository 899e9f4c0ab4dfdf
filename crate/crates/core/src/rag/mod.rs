//! The black-box RAG system under audit.
//!
//! A [`RagSystem`] owns a read-only corpus, a retriever and a responder toy
//! LM. Auditors only ever see it through [`RagSystem::ask_fn`], an opaque
//! query-to-response function.

pub mod tfidf;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tfidf::{SparseVec, TfIdf, TfIdfIndex};

use crate::corpus::{parse_doc_id, Document};
use crate::error::{Error, Result};
use crate::hashing::{derive, derive_str, hash_tokens};
use crate::lm_sim::{generate, CopyModel, DecodeConstraint, LmParams, Profile, ToyLm};
use crate::textcore::{max_token_overlap, tokenize, Token, TokenSeq, Vocabulary};

/// Model seed of the responder LM.
pub const RESPONDER_MODEL_SEED: u64 = 0x7265_7370_6f6e_6472;
/// Minimum probe overlap for a positive membership answer.
pub const PROBE_OVERLAP: usize = 16;
pub const DEFAULT_RESPONSE_LEN: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retriever {
    /// Target first, then its group-mates, then everything else.
    #[default]
    Perfect,
    TfIdf,
}

impl fmt::Display for Retriever {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Retriever::Perfect => "perfect",
            Retriever::TfIdf => "tf_idf",
        })
    }
}

impl FromStr for Retriever {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "perfect" => Ok(Retriever::Perfect),
            "tfidf" | "tf_idf" => Ok(Retriever::TfIdf),
            other => Err(Error::config(format!(
                "unknown retriever {other:?} (expected perfect or tfidf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RagConfig {
    pub k: usize,
    pub retriever: Retriever,
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memfree_n: Option<usize>,
    pub responder_seed: u64,
    pub response_len: usize,
    /// Replaces the profile's copy constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copy_override: Option<CopyModel>,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            k: 3,
            retriever: Retriever::Perfect,
            profile: Profile::Naive,
            memfree_n: None,
            responder_seed: 0,
            response_len: DEFAULT_RESPONSE_LEN,
            copy_override: None,
        }
    }
}

impl RagConfig {
    /// `h` is the watermark context width responses must be scorable under.
    pub fn validate(&self, h: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be >= 1"));
        }
        if self.response_len < h + 1 {
            return Err(Error::config(format!("response_len must be >= h+1 = {}", h + 1)));
        }
        DecodeConstraint {
            memfree_n: self.memfree_n,
        }
        .validate()?;
        self.copy_model().validate()
    }

    pub fn copy_model(&self) -> CopyModel {
        self.copy_override.unwrap_or_else(|| self.profile.copy_model())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// Open question about the target's content.
    #[default]
    Question,
    /// Request to continue a document prefix.
    Continuation,
    /// Asks whether the carried text is in the system's context.
    MembershipProbe,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub target_doc_id: String,
    pub tokens: TokenSeq,
    #[serde(default)]
    pub kind: QueryKind,
}

impl Query {
    pub fn question(target_doc_id: impl Into<String>, tokens: TokenSeq) -> Self {
        Self {
            target_doc_id: target_doc_id.into(),
            tokens,
            kind: QueryKind::Question,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::contract("query has no tokens"));
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let kind = match self.kind {
            QueryKind::Question => 1,
            QueryKind::Continuation => 2,
            QueryKind::MembershipProbe => 3,
        };
        derive(
            hash_tokens(derive_str(kind, &self.target_doc_id), &self.tokens),
            self.tokens.len() as u64,
        )
    }
}

/// Affirmative and negative membership replies.
pub fn yes_reply(vocab: Vocabulary) -> TokenSeq {
    tokenize("yes", vocab)
}

pub fn no_reply(vocab: Vocabulary) -> TokenSeq {
    tokenize("no", vocab)
}

/// Failure of the transport between auditor and system.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AskError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rejected query: {0}")]
    Rejected(String),
}

/// Three-tier idealized retrieval: the target if present, then the target's
/// group-mates shuffled, then all other documents shuffled; truncated to `k`.
pub fn perfect_retrieve<'a>(query: &Query, corpus: &'a [Document], k: usize, rng_seed: u64) -> Vec<&'a Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let group = parse_doc_id(&query.target_doc_id).ok().map(|(g, _)| g);
    let mut out: Vec<&Document> = corpus
        .iter()
        .filter(|d| d.doc_id == query.target_doc_id)
        .take(1)
        .collect();
    if out.len() < k {
        let mut mates: Vec<&Document> = corpus
            .iter()
            .filter(|d| Some(d.group_id) == group && d.doc_id != query.target_doc_id)
            .collect();
        mates.shuffle(&mut rng);
        out.extend(mates.into_iter().take(k - out.len()));
    }
    if out.len() < k {
        let others: Vec<usize> = (0..corpus.len())
            .filter(|&i| Some(corpus[i].group_id) != group && corpus[i].doc_id != query.target_doc_id)
            .collect();
        let need = (k - out.len()).min(others.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, others.len(), need).into_vec();
        picked.shuffle(&mut rng);
        out.extend(picked.into_iter().map(|i| &corpus[others[i]]));
    }
    out
}

/// Top-`k` corpus documents by TF-IDF cosine; ties by ascending doc id.
pub fn tfidf_retrieve<'a>(query_tokens: &[Token], corpus: &'a [Document], k: usize) -> Vec<&'a Document> {
    let index = TfIdfIndex::build(&corpus.iter().map(|d| &d.tokens[..]).collect::<Vec<_>>());
    index
        .top_k(query_tokens, k, |i| corpus[i].doc_id.as_str())
        .into_iter()
        .map(|i| &corpus[i])
        .collect()
}

/// A deployed RAG system over a fixed corpus.
#[derive(Debug)]
pub struct RagSystem {
    config: RagConfig,
    corpus: Vec<Document>,
    index: Option<TfIdfIndex>,
    responder: ToyLm,
}

impl RagSystem {
    pub fn new(corpus: Vec<Document>, config: RagConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate(1)?;
        let index = match config.retriever {
            Retriever::TfIdf => Some(TfIdfIndex::build(
                &corpus.iter().map(|d| &d.tokens[..]).collect::<Vec<_>>(),
            )),
            Retriever::Perfect => None,
        };
        Ok(Self {
            config,
            corpus,
            index,
            responder: ToyLm::new(LmParams::new(RESPONDER_MODEL_SEED), vocab)?,
        })
    }

    pub fn config(&self) -> &RagConfig {
        &self.config
    }

    pub fn corpus_len(&self) -> usize {
        self.corpus.len()
    }

    pub fn vocab(&self) -> Vocabulary {
        self.responder.vocab()
    }

    pub fn retrieve(&self, query: &Query) -> Vec<&Document> {
        let seed = derive(derive_str(self.config.responder_seed, "retrieve"), query.fingerprint());
        match &self.index {
            Some(index) => index
                .top_k(&query.tokens, self.config.k, |i| self.corpus[i].doc_id.as_str())
                .into_iter()
                .map(|i| &self.corpus[i])
                .collect(),
            None => perfect_retrieve(query, &self.corpus, self.config.k, seed),
        }
    }

    /// The system's reply to `query`. Responses are never watermark-biased.
    pub fn answer(&self, query: &Query) -> Result<TokenSeq> {
        query.validate()?;
        let retrieved = self.retrieve(query);
        let vocab = self.vocab();
        if query.kind == QueryKind::MembershipProbe {
            let positive = self.config.profile == Profile::Naive
                && retrieved
                    .iter()
                    .any(|d| max_token_overlap(&query.tokens, &d.tokens) >= PROBE_OVERLAP);
            return Ok(if positive { yes_reply(vocab) } else { no_reply(vocab) });
        }
        let context: Vec<&[Token]> = retrieved.iter().map(|d| &d.tokens[..]).collect();
        generate(
            &query.tokens,
            &context,
            self.config.response_len,
            &self.responder,
            &self.config.copy_model(),
            None,
            &DecodeConstraint {
                memfree_n: self.config.memfree_n,
            },
            derive(derive_str(self.config.responder_seed, "respond"), query.fingerprint()),
        )
    }

    /// Opaque black-box view of the system.
    pub fn ask_fn(&self) -> impl Fn(&Query) -> std::result::Result<TokenSeq, AskError> + Sync + '_ {
        move |q| self.answer(q).map_err(|e| AskError::Rejected(e.to_string()))
    }
}

/// Transport that drops each attempt with probability `failure_rate`.
/// Whether attempt `n` of a query fails is a pure function of the query,
/// `n` and `seed`, independent of call interleaving.
pub struct FlakyTransport<F> {
    inner: F,
    failure_rate: f64,
    seed: u64,
    attempts: Mutex<HashMap<u64, u64>>,
}

impl<F> FlakyTransport<F>
where
    F: Fn(&Query) -> std::result::Result<TokenSeq, AskError> + Sync,
{
    pub fn new(inner: F, failure_rate: f64, seed: u64) -> Self {
        Self {
            inner,
            failure_rate,
            seed,
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn ask(&self, query: &Query) -> std::result::Result<TokenSeq, AskError> {
        let key = query.fingerprint();
        let attempt = {
            let mut map = self.attempts.lock().unwrap_or_else(|p| p.into_inner());
            let n = map.entry(key).or_default();
            *n += 1;
            *n
        };
        let u = (derive(derive(self.seed, key), attempt) >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.failure_rate {
            return Err(AskError::Transport(format!(
                "attempt {attempt} for {} dropped",
                query.target_doc_id
            )));
        }
        (self.inner)(query)
    }
}
