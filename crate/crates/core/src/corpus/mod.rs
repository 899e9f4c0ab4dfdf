//! Synthetic fact-sharing article corpus and the Easy/Hard experiment splits.
//!
//! A group is one underlying story: 5 key facts and 10 additional facts, each
//! a short token phrase. Up to four simulated authors write an article per
//! group; every article embeds all key facts (twice) and two sampled
//! additional facts (once) as verbatim phrases between author-specific toy-LM
//! filler. Articles by different authors on one group therefore share facts
//! but not wording, which is what separates the Easy and Hard settings.

mod io;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_corpus, read_manifest, save_corpus, Manifest, MANIFEST_SCHEMA};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::{derive, derive_str};
use crate::lm_sim::{generate, watermark_paraphrase_locked, CopyModel, DecodeConstraint, LmParams, ToyLm};
use crate::textcore::{find_runs, Token, TokenSeq, Vocabulary};
use crate::watermark::{score_text, WatermarkParams};

pub const KEY_FACTS: usize = 5;
pub const ADDITIONAL_FACTS: usize = 10;
/// Additional facts sampled into each article.
pub const SAMPLED_ADDITIONAL: usize = 2;
pub const FACT_LEN: std::ops::RangeInclusive<usize> = 5..=12;
pub const ARTICLE_LEN: std::ops::RangeInclusive<usize> = 500..=1000;
/// How often each key fact is stated in an article.
pub const KEY_MENTIONS: usize = 2;
/// Group ids of training instantiations start here, clear of audited groups.
pub const TRAINING_GROUP_OFFSET: u32 = 5000;

/// Model seeds of the four simulated authors.
pub const AUTHOR_MODEL_SEEDS: [u64; 4] = [
    0x6175_7468_6f72_0061,
    0x6175_7468_6f72_0062,
    0x6175_7468_6f72_0063,
    0x6175_7468_6f72_0064,
];

/// Model seed of the owner's watermarking paraphraser.
pub const PARAPHRASER_MODEL_SEED: u64 = 0x7061_7261_7068_7273;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub id: u32,
    pub tokens: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: u32,
    pub key_facts: Vec<Fact>,
    pub additional_facts: Vec<Fact>,
}

impl Group {
    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.key_facts.iter().chain(&self.additional_facts)
    }

    pub fn fact(&self, id: u32) -> Option<&Fact> {
        self.facts().find(|f| f.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_facts.len() != KEY_FACTS || self.additional_facts.len() != ADDITIONAL_FACTS {
            return Err(Error::Mismatch(format!(
                "group {} has {} key and {} additional facts",
                self.group_id,
                self.key_facts.len(),
                self.additional_facts.len()
            )));
        }
        let mut ids = HashSet::new();
        let mut phrases = HashSet::new();
        for f in self.facts() {
            if f.tokens.is_empty() || !ids.insert(f.id) || !phrases.insert(&f.tokens) {
                return Err(Error::Mismatch(format!(
                    "group {} has an empty or duplicate fact {}",
                    self.group_id, f.id
                )));
            }
        }
        Ok(())
    }
}

/// One of the four simulated authors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    A,
    B,
    C,
    D,
}

impl Author {
    pub const ALL: [Author; 4] = [Author::A, Author::B, Author::C, Author::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Author> {
        match c {
            'a' => Some(Author::A),
            'b' => Some(Author::B),
            'c' => Some(Author::C),
            'd' => Some(Author::D),
            _ => None,
        }
    }
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// `#<group:04><author>`, e.g. `#0123a`.
pub fn doc_id(group_id: u32, author: Author) -> String {
    format!("#{group_id:04}{}", author.letter())
}

/// Inverse of [`doc_id`]; also accepts unpadded group numbers (`#123a`).
pub fn parse_doc_id(id: &str) -> Result<(u32, Author)> {
    let bad = || Error::Mismatch(format!("malformed document id {id:?}"));
    let body = id.strip_prefix('#').ok_or_else(bad)?;
    let letter = body.chars().last().ok_or_else(bad)?;
    let author = Author::from_letter(letter).ok_or_else(bad)?;
    let digits = &body[..body.len() - 1];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let group = digits.parse().map_err(|_| bad())?;
    Ok((group, author))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub group_id: u32,
    pub author_id: Author,
    pub tokens: TokenSeq,
    #[serde(rename = "fact_ids")]
    pub included_fact_ids: Vec<u32>,
    pub watermarked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// At most one article per group in the corpus.
    #[default]
    Easy,
    /// Three articles per represented group in the corpus; the fourth is the
    /// owner's held-out copy.
    Hard,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Easy => "easy",
            Setting::Hard => "hard",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Setting::Easy),
            "hard" => Ok(Setting::Hard),
            other => Err(Error::config(format!(
                "unknown setting {other:?} (expected easy or hard)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub setting: Setting,
    pub scale: usize,
    pub seed: u64,
    pub vocab_size: u32,
    /// Fingerprint of the salt the owner documents were watermarked under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salt_fingerprint: Option<String>,
    /// Documents of the owner that the corpus contains.
    pub owner_in: Vec<Document>,
    /// Documents of the owner that the corpus does not contain.
    pub owner_out: Vec<Document>,
    pub corpus: Vec<Document>,
    /// Every group with at least one document above, by ascending id.
    pub groups: Vec<Group>,
    /// Unwatermarked versions of `owner_in`, kept once the owner's documents
    /// are watermarked.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub originals: Vec<Document>,
}

/// Group count needed for a split at scale `s`.
pub fn groups_needed(scale: usize) -> usize {
    10 * scale
}

/// The four authors' toy LMs.
#[derive(Debug, Clone)]
pub struct AuthorModels {
    models: Vec<ToyLm>,
}

impl AuthorModels {
    pub fn new(vocab: Vocabulary) -> Result<Self> {
        let models = AUTHOR_MODEL_SEEDS
            .iter()
            .map(|&s| ToyLm::new(LmParams::new(s), vocab))
            .collect::<Result<_>>()?;
        Ok(Self { models })
    }

    pub fn get(&self, author: Author) -> &ToyLm {
        &self.models[author.index()]
    }

    pub fn vocab(&self) -> Vocabulary {
        self.models[0].vocab()
    }
}

/// Synthesizes the 15 facts of a group. Pure in `(group_id, seed, vocab)`.
pub fn gen_group(group_id: u32, seed: u64, vocab: Vocabulary) -> Group {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(derive_str(seed, "group"), u64::from(group_id)));
    let mut seen: HashSet<TokenSeq> = HashSet::new();
    let mut facts = Vec::with_capacity(KEY_FACTS + ADDITIONAL_FACTS);
    while facts.len() < KEY_FACTS + ADDITIONAL_FACTS {
        let len = rng.random_range(FACT_LEN);
        let tokens: TokenSeq = (0..len).map(|_| rng.random_range(0..vocab.size())).collect();
        if seen.insert(tokens.clone()) {
            facts.push(Fact {
                id: facts.len() as u32,
                tokens,
            });
        }
    }
    let additional_facts = facts.split_off(KEY_FACTS);
    Group {
        group_id,
        key_facts: facts,
        additional_facts,
    }
}

/// One author's article on `group`. Pure in its arguments.
pub fn write_article(group: &Group, author: Author, models: &AuthorModels, seed: u64) -> Result<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(
        derive(derive_str(seed, "article"), u64::from(group.group_id)),
        author.index() as u64,
    ));
    let mut extra: Vec<&Fact> = group.additional_facts.iter().collect();
    extra.shuffle(&mut rng);
    extra.truncate(SAMPLED_ADDITIONAL);

    let mut mentions: Vec<&Fact> = Vec::new();
    for f in &group.key_facts {
        mentions.extend(std::iter::repeat_n(f, KEY_MENTIONS));
    }
    mentions.extend(&extra);
    mentions.shuffle(&mut rng);

    let fact_tokens: usize = mentions.iter().map(|f| f.tokens.len()).sum();
    let len = rng.random_range(ARTICLE_LEN);
    let filler = len - fact_tokens;
    let mut cuts: Vec<usize> = (0..mentions.len()).map(|_| rng.random_range(0..=filler)).collect();
    cuts.push(0);
    cuts.push(filler);
    cuts.sort_unstable();

    let lm = models.get(author);
    let mut tokens: TokenSeq = Vec::with_capacity(len);
    for (i, seg) in cuts.windows(2).enumerate() {
        let n = seg[1] - seg[0];
        if n > 0 {
            let prompt = &tokens[tokens.len().saturating_sub(3)..];
            let text = generate::<TokenSeq>(
                prompt,
                &[],
                n,
                lm,
                &CopyModel::none(),
                None,
                &DecodeConstraint::default(),
                rng.random(),
            )?;
            tokens.extend(text);
        }
        if let Some(f) = mentions.get(i) {
            tokens.extend_from_slice(&f.tokens);
        }
    }

    let mut included_fact_ids: Vec<u32> = group
        .key_facts
        .iter()
        .chain(extra.iter().copied())
        .map(|f| f.id)
        .collect();
    included_fact_ids.sort_unstable();
    Ok(Document {
        doc_id: doc_id(group.group_id, author),
        group_id: group.group_id,
        author_id: author,
        tokens,
        included_fact_ids,
        watermarked: false,
    })
}

/// Which (group, author) articles a split consists of.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitPlan {
    pub owner_in: Vec<(u32, Author)>,
    pub owner_out: Vec<(u32, Author)>,
    pub corpus: Vec<(u32, Author)>,
}

/// Samples the split layout over `group_ids` at scale `s`.
///
/// Easy: disjoint group subsets of sizes `(2s, 3s, 3s, 2s)`; subset `i`
/// contributes author `i`'s articles, the first to the corpus and the owner,
/// the middle two to the corpus only, the last to the owner only.
/// Hard: `10s` groups, authors a to c of each in the corpus, the owner holds
/// `2s` random author-a articles (in) and `2s` random author-d articles (out).
pub fn plan_split(group_ids: &[u32], setting: Setting, scale: usize, seed: u64) -> Result<SplitPlan> {
    let need = groups_needed(scale);
    if scale == 0 || group_ids.len() < need {
        return Err(Error::config(format!(
            "scale {scale} needs {need} groups, {} available",
            group_ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_str(seed, "split"));
    let mut ids: Vec<u32> = group_ids.choose_multiple(&mut rng, need).copied().collect();
    ids.shuffle(&mut rng);
    let mut plan = SplitPlan::default();
    match setting {
        Setting::Easy => {
            let bounds = [0, 2 * scale, 5 * scale, 8 * scale, 10 * scale];
            for (i, author) in Author::ALL.into_iter().enumerate() {
                let subset = ids[bounds[i]..bounds[i + 1]].iter().map(|&g| (g, author));
                match author {
                    Author::A => {
                        let docs: Vec<_> = subset.collect();
                        plan.owner_in.extend(&docs);
                        plan.corpus.extend(docs);
                    }
                    Author::D => plan.owner_out.extend(subset),
                    _ => plan.corpus.extend(subset),
                }
            }
        }
        Setting::Hard => {
            for &g in &ids {
                plan.corpus.extend([(g, Author::A), (g, Author::B), (g, Author::C)]);
            }
            plan.owner_in = ids
                .choose_multiple(&mut rng, 2 * scale)
                .map(|&g| (g, Author::A))
                .collect();
            plan.owner_out = ids
                .choose_multiple(&mut rng, 2 * scale)
                .map(|&g| (g, Author::D))
                .collect();
        }
    }
    plan.owner_in.sort_unstable();
    plan.owner_out.sort_unstable();
    plan.corpus.sort_unstable();
    Ok(plan)
}

/// Writes the planned articles. Groups not in `groups` are an error.
pub fn sample_split(
    groups: &[Group],
    setting: Setting,
    scale: usize,
    seed: u64,
    models: &AuthorModels,
    exec: Exec,
) -> Result<ExperimentSplit> {
    let ids: Vec<u32> = groups.iter().map(|g| g.group_id).collect();
    let plan = plan_split(&ids, setting, scale, seed)?;
    let by_id: BTreeMap<u32, &Group> = groups.iter().map(|g| (g.group_id, g)).collect();

    let mut wanted: Vec<(u32, Author)> = plan.corpus.iter().chain(&plan.owner_out).copied().collect();
    wanted.sort_unstable();
    wanted.dedup();
    let docs = exec.map(&wanted, |&(g, a)| write_article(by_id[&g], a, models, seed));
    let mut written: BTreeMap<(u32, Author), Document> = BTreeMap::new();
    for (key, doc) in wanted.iter().zip(docs) {
        written.insert(*key, doc?);
    }
    let pick = |keys: &[(u32, Author)]| keys.iter().map(|k| written[k].clone()).collect::<Vec<_>>();

    let used: HashSet<u32> = wanted.iter().map(|&(g, _)| g).collect();
    let mut kept: Vec<Group> = groups.iter().filter(|g| used.contains(&g.group_id)).cloned().collect();
    kept.sort_by_key(|g| g.group_id);
    Ok(ExperimentSplit {
        setting,
        scale,
        seed,
        vocab_size: models.vocab().size(),
        salt_fingerprint: None,
        owner_in: pick(&plan.owner_in),
        owner_out: pick(&plan.owner_out),
        corpus: pick(&plan.corpus),
        groups: kept,
        originals: Vec::new(),
    })
}

/// Generates groups `offset .. offset + 10s` and samples a split over them.
pub fn build_split(
    setting: Setting,
    scale: usize,
    seed: u64,
    group_offset: u32,
    models: &AuthorModels,
    exec: Exec,
) -> Result<ExperimentSplit> {
    let n = groups_needed(scale) as u32;
    let ids: Vec<u32> = (group_offset..group_offset + n).collect();
    let groups = exec.map(&ids, |&g| gen_group(g, seed, models.vocab()));
    sample_split(&groups, setting, scale, seed, models, exec)
}

/// Per-document outcome of watermarking the owner's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkedDoc {
    pub doc_id: String,
    pub green_ratio: f64,
    /// Included facts still present verbatim.
    pub facts_retained: usize,
    pub facts_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSummary {
    pub docs: Vec<WatermarkedDoc>,
    pub mean_green_ratio: f64,
    pub fact_retention: f64,
}

/// Mask of positions covered by any occurrence of an included fact.
pub fn fact_mask(doc: &Document, group: &Group) -> Vec<bool> {
    let mut mask = vec![false; doc.tokens.len()];
    for id in &doc.included_fact_ids {
        if let Some(f) = group.fact(*id) {
            for start in find_runs(&doc.tokens, &f.tokens) {
                mask[start..start + f.tokens.len()].fill(true);
            }
        }
    }
    mask
}

impl ExperimentSplit {
    pub fn group(&self, group_id: u32) -> Option<&Group> {
        self.groups
            .binary_search_by_key(&group_id, |g| g.group_id)
            .ok()
            .map(|i| &self.groups[i])
    }

    /// Phrases of the document's included facts, key facts first.
    pub fn included_facts<'a>(&'a self, doc: &'a Document) -> Vec<&'a Fact> {
        self.group(doc.group_id)
            .map(|g| doc.included_fact_ids.iter().filter_map(|&id| g.fact(id)).collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let corpus_ids: HashSet<&str> = self.corpus.iter().map(|d| d.doc_id.as_str()).collect();
        if corpus_ids.len() != self.corpus.len() {
            return Err(Error::Mismatch("duplicate document in corpus".into()));
        }
        for d in &self.owner_in {
            if !corpus_ids.contains(d.doc_id.as_str()) {
                return Err(Error::Mismatch(format!(
                    "owner_in document {} missing from corpus",
                    d.doc_id
                )));
            }
        }
        for d in &self.owner_out {
            if corpus_ids.contains(d.doc_id.as_str()) {
                return Err(Error::Mismatch(format!(
                    "owner_out document {} is in the corpus",
                    d.doc_id
                )));
            }
        }
        for d in self.corpus.iter().chain(&self.owner_out) {
            if parse_doc_id(&d.doc_id)? != (d.group_id, d.author_id) {
                return Err(Error::Mismatch(format!(
                    "document id {} disagrees with its fields",
                    d.doc_id
                )));
            }
            if self.group(d.group_id).is_none() {
                return Err(Error::Mismatch(format!(
                    "document {} references unknown group",
                    d.doc_id
                )));
            }
        }
        if !self.originals.is_empty() {
            let owner_ids: Vec<&str> = self.owner_in.iter().map(|d| d.doc_id.as_str()).collect();
            let original_ids: Vec<&str> = self.originals.iter().map(|d| d.doc_id.as_str()).collect();
            if owner_ids != original_ids || self.originals.iter().any(|d| d.watermarked) {
                return Err(Error::Mismatch(
                    "originals must be the unwatermarked owner_in documents".into(),
                ));
            }
        }
        match self.setting {
            Setting::Easy => {
                let mut groups = HashSet::new();
                if !self.corpus.iter().all(|d| groups.insert(d.group_id)) {
                    return Err(Error::Mismatch("easy corpus holds two documents of one group".into()));
                }
            }
            Setting::Hard => {
                let mut authors: BTreeMap<u32, Vec<Author>> = BTreeMap::new();
                for d in &self.corpus {
                    authors.entry(d.group_id).or_default().push(d.author_id);
                }
                for (g, mut a) in authors {
                    a.sort_unstable();
                    if a != [Author::A, Author::B, Author::C] {
                        return Err(Error::Mismatch(format!("hard corpus group {g} has authors {a:?}")));
                    }
                }
                if self.owner_out.iter().any(|d| d.author_id != Author::D) {
                    return Err(Error::Mismatch("hard owner_out must be author d".into()));
                }
            }
        }
        Ok(())
    }

    /// Replaces every owner document (and its corpus copy) with a watermarked
    /// paraphrase. Fact phrases are kept verbatim; filler is rewritten.
    pub fn watermark_owner(
        &mut self,
        wm: &WatermarkParams,
        paraphraser: &ToyLm,
        fidelity: f64,
        seed: u64,
        exec: Exec,
    ) -> Result<WatermarkSummary> {
        let rewrite = |doc: &Document| -> Result<(Document, WatermarkedDoc)> {
            let group = self
                .group(doc.group_id)
                .ok_or_else(|| Error::Mismatch(format!("unknown group for {}", doc.doc_id)))?;
            let mask = fact_mask(doc, group);
            let tokens = watermark_paraphrase_locked(
                &doc.tokens,
                paraphraser,
                wm,
                fidelity,
                &mask,
                derive_str(seed, &doc.doc_id),
            )?;
            let facts: Vec<&Fact> = doc.included_fact_ids.iter().filter_map(|&id| group.fact(id)).collect();
            let facts_retained = facts
                .iter()
                .filter(|f| !find_runs(&tokens, &f.tokens).is_empty())
                .count();
            let green_ratio = score_text(&tokens, wm, paraphraser.vocab(), None)
                .green_ratio()
                .unwrap_or(0.0);
            let stats = WatermarkedDoc {
                doc_id: doc.doc_id.clone(),
                green_ratio,
                facts_retained,
                facts_total: facts.len(),
            };
            Ok((
                Document {
                    tokens,
                    watermarked: true,
                    ..doc.clone()
                },
                stats,
            ))
        };

        let owners: Vec<Document> = self.owner_in.iter().chain(&self.owner_out).cloned().collect();
        let results = exec.map(&owners, rewrite);
        let mut docs = Vec::with_capacity(owners.len());
        let mut stats = Vec::with_capacity(owners.len());
        for r in results {
            let (d, s) = r?;
            docs.push(d);
            stats.push(s);
        }
        let replaced: BTreeMap<String, Document> = docs.iter().map(|d| (d.doc_id.clone(), d.clone())).collect();
        let n_in = self.owner_in.len();
        if self.originals.is_empty() {
            self.originals = self.owner_in.clone();
        }
        self.owner_out = docs.split_off(n_in);
        self.owner_in = docs;
        for d in self.corpus.iter_mut() {
            if let Some(w) = replaced.get(&d.doc_id) {
                *d = w.clone();
            }
        }

        self.salt_fingerprint = Some(wm.salt_fingerprint());
        let n = stats.len().max(1) as f64;
        let mean_green_ratio = stats.iter().map(|s| s.green_ratio).sum::<f64>() / n;
        let (kept, total) = stats
            .iter()
            .fold((0usize, 0usize), |(k, t), s| (k + s.facts_retained, t + s.facts_total));
        Ok(WatermarkSummary {
            docs: stats,
            mean_green_ratio,
            fact_retention: if total == 0 { 1.0 } else { kept as f64 / total as f64 },
        })
    }

    /// The corpus as it stands when the owner's data is absent: every
    /// watermarked owner copy is swapped back for its original.
    pub fn unwatermarked_corpus(&self) -> Vec<Document> {
        let originals: BTreeMap<&str, &Document> = self.originals.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        self.corpus
            .iter()
            .map(|d| {
                originals
                    .get(d.doc_id.as_str())
                    .map_or_else(|| d.clone(), |o| (*o).clone())
            })
            .collect()
    }

    /// Number of corpus documents containing `phrase` verbatim.
    pub fn corpus_mentions(&self, phrase: &[Token]) -> usize {
        self.corpus
            .iter()
            .filter(|d| !find_runs(&d.tokens, phrase).is_empty())
            .count()
    }
}
