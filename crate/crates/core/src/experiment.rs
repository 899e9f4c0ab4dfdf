//! Seeded experiment harness: builds worlds, runs audit batteries, baseline
//! comparisons and one-axis ablation sweeps.
//!
//! A world is one seeded split with the owner's documents watermarked. Every
//! random choice below is derived from the world seed, so a battery is a
//! pure function of its config.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::{
    di_threshold, fit_sib, mi_accfacts, mi_ibm, mi_sib, omega_harness, sib_accuracy, sib_grid, sib_scores, ward_audit,
    AskFn, AuditConfig, AuditReport, Decision, MiScore, OwnerData, SibScores, SibThresholds,
};
use crate::corpus::{
    build_split, AuthorModels, Document, ExperimentSplit, Setting, WatermarkSummary, PARAPHRASER_MODEL_SEED,
    TRAINING_GROUP_OFFSET,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::derive_str;
use crate::lm_sim::{CopyModel, LmParams, Profile, ToyLm};
use crate::rag::{FlakyTransport, RagConfig, RagSystem, Retriever, DEFAULT_RESPONSE_LEN};
use crate::textcore::{Vocabulary, DEFAULT_VOCAB_SIZE};
use crate::watermark::{log10_p_value, WatermarkParams};

/// Model seed of the auxiliary LM that scores SIB perplexity.
pub const AUX_MODEL_SEED: u64 = 0x6175_7869_6c69_6172;
/// Paraphrase fidelity used for owner watermarking.
pub const DEFAULT_FIDELITY: f64 = 0.85;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub scale: usize,
    pub profile: Profile,
    pub retriever: Retriever,
    pub k: usize,
    pub memfree_n: Option<usize>,
    pub response_len: usize,
    pub copy_override: Option<CopyModel>,
    pub wm: WatermarkParams,
    pub fidelity: f64,
    pub qpd: usize,
    pub max_queries: usize,
    pub alpha_log10: f64,
    pub omega: f64,
    /// Audit only a seeded subset of this many owner documents.
    pub owner_docs: Option<usize>,
    /// Probability that a single transport attempt fails.
    pub failure_rate: f64,
    pub seeds: Vec<u64>,
    pub vocab_size: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Easy,
            scale: 10,
            profile: Profile::Naive,
            retriever: Retriever::Perfect,
            k: 3,
            memfree_n: None,
            response_len: DEFAULT_RESPONSE_LEN,
            copy_override: None,
            wm: WatermarkParams::with_salt(0x5eed_5a17),
            fidelity: DEFAULT_FIDELITY,
            qpd: 1,
            max_queries: 100,
            alpha_log10: log10_p_value(4.0),
            omega: 0.0,
            owner_docs: None,
            failure_rate: 0.0,
            seeds: DEFAULT_SEEDS.to_vec(),
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

impl ExperimentConfig {
    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_size)
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        if self.scale == 0 {
            return Err(Error::config("scale must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::config(format!(
                "fidelity must lie in [0,1], got {}",
                self.fidelity
            )));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::config(format!("omega must lie in [0,1], got {}", self.omega)));
        }
        if !(0.0..1.0).contains(&self.failure_rate) {
            return Err(Error::config(format!(
                "failure_rate must lie in [0,1), got {}",
                self.failure_rate
            )));
        }
        self.wm.validate(vocab)?;
        self.rag_config(0).validate(self.wm.h)?;
        self.audit_config(0).validate()
    }

    pub fn rag_config(&self, seed: u64) -> RagConfig {
        RagConfig {
            k: self.k,
            retriever: self.retriever,
            profile: self.profile,
            memfree_n: self.memfree_n,
            responder_seed: derive_str(seed, "responder"),
            response_len: self.response_len,
            copy_override: self.copy_override,
        }
    }

    pub fn audit_config(&self, seed: u64) -> AuditConfig {
        AuditConfig {
            alpha_log10: self.alpha_log10,
            qpd: self.qpd,
            max_queries: self.max_queries,
            seed: derive_str(seed, "audit"),
        }
    }
}

/// Ground truth of one audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Case {
    In,
    Out,
}

impl Case {
    pub const ALL: [Case; 2] = [Case::In, Case::Out];

    pub fn expected(self) -> Decision {
        match self {
            Case::In => Decision::In,
            Case::Out => Decision::Out,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expected().fmt(f)
    }
}

/// Models shared by every world of one vocabulary.
#[derive(Debug)]
pub struct Lab {
    models: AuthorModels,
    paraphraser: ToyLm,
    aux: ToyLm,
}

/// One seeded split whose owner documents carry the watermark.
#[derive(Debug, Clone)]
pub struct World {
    pub seed: u64,
    pub split: ExperimentSplit,
    pub watermark: WatermarkSummary,
}

impl Lab {
    pub fn new(vocab: Vocabulary) -> Result<Self> {
        Ok(Self {
            models: AuthorModels::new(vocab)?,
            paraphraser: ToyLm::new(LmParams::new(PARAPHRASER_MODEL_SEED), vocab)?,
            aux: ToyLm::new(LmParams::new(AUX_MODEL_SEED), vocab)?,
        })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.models.vocab()
    }

    pub fn models(&self) -> &AuthorModels {
        &self.models
    }

    pub fn paraphraser(&self) -> &ToyLm {
        &self.paraphraser
    }

    fn check_vocab(&self, cfg: &ExperimentConfig) -> Result<()> {
        if cfg.vocab_size != self.vocab().size() {
            return Err(Error::Mismatch(format!(
                "config vocabulary {} differs from the lab's {}",
                cfg.vocab_size,
                self.vocab().size()
            )));
        }
        Ok(())
    }

    /// The unwatermarked split of world `seed`.
    pub fn split(&self, cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<ExperimentSplit> {
        self.check_vocab(cfg)?;
        build_split(cfg.setting, cfg.scale, seed, 0, &self.models, exec)
    }

    /// Watermarks the owner's documents of `split` under `cfg.wm`.
    pub fn watermark(&self, cfg: &ExperimentConfig, mut split: ExperimentSplit, exec: Exec) -> Result<World> {
        let seed = split.seed;
        let watermark = split.watermark_owner(
            &cfg.wm,
            &self.paraphraser,
            cfg.fidelity,
            derive_str(seed, "watermark"),
            exec,
        )?;
        Ok(World { seed, split, watermark })
    }

    pub fn world(&self, cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<World> {
        let split = self.split(cfg, seed, exec)?;
        self.watermark(cfg, split, exec)
    }

    /// Unwatermarked Easy-structured training instantiation paired with
    /// world `seed`, drawn from groups disjoint from every test world.
    pub fn training_split(&self, cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<ExperimentSplit> {
        self.check_vocab(cfg)?;
        build_split(
            Setting::Easy,
            cfg.scale,
            derive_str(seed, "training"),
            TRAINING_GROUP_OFFSET,
            &self.models,
            exec,
        )
    }
}

/// The audited corpus (after partial-inclusion removal) and the owner's view.
fn audit_inputs(
    cfg: &ExperimentConfig,
    split: &ExperimentSplit,
    seed: u64,
    case: Case,
) -> Result<(Vec<Document>, OwnerData)> {
    let split = omega_harness(split, cfg.omega, derive_str(seed, "omega"))?;
    let (docs, corpus) = match case {
        Case::In => (&split.owner_in, split.corpus.clone()),
        // Nothing under the owner's key may reach the system in an OUT world.
        Case::Out => (&split.owner_out, split.unwatermarked_corpus()),
    };
    let mut owner = OwnerData::from_split(&split, docs)?;
    if let Some(n) = cfg.owner_docs {
        owner = owner.subset(n, derive_str(seed, "owner-docs"));
    }
    Ok((corpus, owner))
}

/// Runs `f` against the deployed system, through the flaky transport when
/// configured.
fn with_system<R>(
    cfg: &ExperimentConfig,
    seed: u64,
    corpus: Vec<Document>,
    vocab: Vocabulary,
    f: impl FnOnce(&AskFn<'_>) -> Result<R>,
) -> Result<R> {
    let system = RagSystem::new(corpus, cfg.rag_config(seed), vocab)?;
    let ask = system.ask_fn();
    if cfg.failure_rate > 0.0 {
        let flaky = FlakyTransport::new(ask, cfg.failure_rate, derive_str(seed, "transport"));
        f(&|q: &crate::rag::Query| flaky.ask(q))
    } else {
        f(&ask)
    }
}

/// One WARD audit of `world` in the given case.
pub fn run_case(cfg: &ExperimentConfig, world: &World, case: Case, exec: Exec) -> Result<AuditReport> {
    audit_split(cfg, &world.split, case, exec)
}

/// One WARD audit of a watermarked split, seeded by the split's own seed.
pub fn audit_split(cfg: &ExperimentConfig, split: &ExperimentSplit, case: Case, exec: Exec) -> Result<AuditReport> {
    let vocab = cfg.vocab()?;
    let (corpus, owner) = audit_inputs(cfg, split, split.seed, case)?;
    with_system(cfg, split.seed, corpus, vocab, |ask| {
        ward_audit(&owner, ask, &cfg.audit_config(split.seed), &cfg.wm, vocab, exec)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub seed: u64,
    pub case: Case,
    pub report: AuditReport,
}

impl CaseResult {
    pub fn correct(&self) -> bool {
        self.report.decision == self.case.expected()
    }
}

/// IN and OUT audits for every configured seed.
pub fn run_battery(lab: &Lab, cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<CaseResult>> {
    cfg.validate()?;
    let per_seed = exec.map(&cfg.seeds, |&seed| -> Result<Vec<CaseResult>> {
        let world = lab.world(cfg, seed, exec)?;
        Case::ALL
            .iter()
            .map(|&case| {
                Ok(CaseResult {
                    seed,
                    case,
                    report: run_case(cfg, &world, case, exec)?,
                })
            })
            .collect()
    });
    Ok(per_seed
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// Per-case aggregate: most conservative p-values are the maximum for IN
/// and the minimum for OUT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: Case,
    pub runs: usize,
    pub correct: usize,
    pub min_log10_p: f64,
    pub max_log10_p: f64,
    pub max_queries_to_decision: Option<usize>,
}

pub fn summarize(results: &[CaseResult]) -> Vec<CaseSummary> {
    Case::ALL
        .iter()
        .filter_map(|&case| {
            let rows: Vec<&CaseResult> = results.iter().filter(|r| r.case == case).collect();
            if rows.is_empty() {
                return None;
            }
            let ps = rows.iter().map(|r| r.report.final_score.log10_p);
            Some(CaseSummary {
                case,
                runs: rows.len(),
                correct: rows.iter().filter(|r| r.correct()).count(),
                min_log10_p: ps.clone().fold(f64::INFINITY, f64::min),
                max_log10_p: ps.fold(f64::NEG_INFINITY, f64::max),
                max_queries_to_decision: rows.iter().filter_map(|r| r.report.queries_to_decision).max(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    AccFacts,
    Sib,
    Ibm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::AccFacts, Method::Sib, Method::Ibm];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::AccFacts => "accfacts",
            Method::Sib => "sib",
            Method::Ibm => "ibm",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "accfacts" => Ok(Method::AccFacts),
            "sib" => Ok(Method::Sib),
            "ibm" => Ok(Method::Ibm),
            other => Err(Error::config(format!(
                "unknown method {other:?} (expected accfacts, sib or ibm)"
            ))),
        }
    }
}

/// Dataset-level baseline decision for one seed and case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub seed: u64,
    pub case: Case,
    pub score: MiScore,
    pub threshold: f64,
    pub decision: Decision,
    /// SIB document-level thresholds fitted on the training instantiation.
    pub sib_thresholds: Option<SibThresholds>,
}

impl BaselineRow {
    pub fn correct(&self) -> bool {
        self.decision == self.case.expected()
    }
}

/// Document-level baseline signals of one owner set against one system.
enum DocSignals {
    Binary(Vec<(String, u8)>),
    Sib(Vec<(String, Option<SibScores>)>),
}

impl DocSignals {
    fn score(&self, t: Option<&SibThresholds>) -> MiScore {
        match (self, t) {
            (DocSignals::Binary(v), _) => MiScore::from_per_doc(v.clone()),
            (DocSignals::Sib(v), Some(t)) => {
                MiScore::from_per_doc(v.iter().map(|(id, s)| (id.clone(), mi_sib(*s, t))).collect())
            }
            (DocSignals::Sib(v), None) => MiScore::from_per_doc(v.iter().map(|(id, _)| (id.clone(), 0)).collect()),
        }
    }

    fn sib(&self) -> Vec<Option<SibScores>> {
        match self {
            DocSignals::Sib(v) => v.iter().map(|(_, s)| *s).collect(),
            DocSignals::Binary(_) => Vec::new(),
        }
    }
}

fn doc_signals(
    lab: &Lab,
    method: Method,
    owner: &OwnerData,
    ask: &AskFn<'_>,
    seed: u64,
    exec: Exec,
) -> Result<DocSignals> {
    let vocab = lab.vocab();
    let idx: Vec<usize> = (0..owner.len()).collect();
    let id = |i: usize| owner.docs[i].doc.doc_id.clone();
    Ok(match method {
        Method::AccFacts => DocSignals::Binary(exec.map(&idx, |&i| (id(i), mi_accfacts(owner, i, ask, seed)))),
        Method::Ibm => DocSignals::Binary(exec.map(&idx, |&i| {
            let d = &owner.docs[i].doc;
            (id(i), mi_ibm(&d.tokens, &d.doc_id, ask, vocab))
        })),
        Method::Sib => {
            let scores = exec.map(&idx, |&i| {
                let d = &owner.docs[i].doc;
                sib_scores(&d.tokens, &d.doc_id, ask, &lab.aux, owner.idf()).map(|s| (id(i), s))
            });
            DocSignals::Sib(scores.into_iter().collect::<Result<Vec<_>>>()?)
        }
    })
}

/// IN and OUT document signals for one split.
fn split_signals(
    lab: &Lab,
    cfg: &ExperimentConfig,
    method: Method,
    split: &ExperimentSplit,
    seed: u64,
    exec: Exec,
) -> Result<(DocSignals, DocSignals)> {
    let q_seed = derive_str(seed, "baseline");
    let signals = |case| -> Result<DocSignals> {
        let (corpus, owner) = audit_inputs(cfg, split, seed, case)?;
        with_system(cfg, seed, corpus, lab.vocab(), |ask| {
            doc_signals(lab, method, &owner, ask, q_seed, exec)
        })
    };
    Ok((signals(Case::In)?, signals(Case::Out)?))
}

/// Baseline `method` on every seed: calibrated on the paired training
/// instantiation, then applied to the test world's IN and OUT owner sets.
pub fn run_baseline(lab: &Lab, cfg: &ExperimentConfig, method: Method, exec: Exec) -> Result<Vec<BaselineRow>> {
    cfg.validate()?;
    let per_seed = exec.map(&cfg.seeds, |&seed| -> Result<Vec<BaselineRow>> {
        let train = lab.training_split(cfg, seed, exec)?;
        let (train_in, train_out) = split_signals(lab, cfg, method, &train, seed, exec)?;
        let sib_t = match method {
            Method::Sib => Some(fit_sib(&train_in.sib(), &train_out.sib())),
            _ => None,
        };
        let threshold = di_threshold(
            &[train_in.score(sib_t.as_ref()).mean],
            &[train_out.score(sib_t.as_ref()).mean],
        )?;

        let world = lab.world(cfg, seed, exec)?;
        let (test_in, test_out) = split_signals(lab, cfg, method, &world.split, seed, exec)?;
        Ok([(Case::In, test_in), (Case::Out, test_out)]
            .into_iter()
            .map(|(case, signals)| {
                let score = signals.score(sib_t.as_ref());
                BaselineRow {
                    seed,
                    case,
                    decision: if score.mean > threshold {
                        Decision::In
                    } else {
                        Decision::Out
                    },
                    score,
                    threshold,
                    sib_thresholds: sib_t,
                }
            })
            .collect())
    });
    Ok(per_seed
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// SIB document-level accuracy at one grid point for one profile, pooled
/// over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub profile: Profile,
    pub similarity: f64,
    pub perplexity: f64,
    pub accuracy: f64,
}

/// SIB accuracy over a shared threshold grid for every profile on the test
/// worlds of `cfg`.
pub fn sib_curve(lab: &Lab, cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let mut labeled = Vec::new();
    for profile in Profile::ALL {
        let pcfg = ExperimentConfig { profile, ..cfg.clone() };
        let per_seed = exec.map(&cfg.seeds, |&seed| -> Result<(DocSignals, DocSignals)> {
            let world = lab.world(&pcfg, seed, exec)?;
            split_signals(lab, &pcfg, Method::Sib, &world.split, seed, exec)
        });
        let (mut members, mut non_members) = (Vec::new(), Vec::new());
        for r in per_seed {
            let (a, b) = r?;
            members.extend(a.sib());
            non_members.extend(b.sib());
        }
        labeled.push((profile, members, non_members));
    }
    let pooled: Vec<Option<SibScores>> = labeled
        .iter()
        .flat_map(|(_, m, n)| m.iter().chain(n).copied())
        .collect();
    let grid = sib_grid(&pooled);
    let mut out = Vec::with_capacity(grid.len() * labeled.len());
    for (profile, members, non_members) in &labeled {
        for t in &grid {
            out.push(CurvePoint {
                profile: *profile,
                similarity: t.similarity,
                perplexity: t.perplexity,
                accuracy: sib_accuracy(members, non_members, t),
            });
        }
    }
    Ok(out)
}

/// Grid points reaching full accuracy under every profile in `curve`.
pub fn universal_thresholds(curve: &[CurvePoint]) -> Vec<SibThresholds> {
    let profiles: std::collections::BTreeSet<&str> = curve.iter().map(|p| p.profile.label()).collect();
    let mut points: Vec<SibThresholds> = Vec::new();
    for p in curve {
        let t = SibThresholds {
            similarity: p.similarity,
            perplexity: p.perplexity,
        };
        if points.contains(&t) {
            continue;
        }
        let perfect = curve
            .iter()
            .filter(|q| q.similarity == t.similarity && q.perplexity == t.perplexity && q.accuracy == 1.0)
            .count();
        if perfect == profiles.len() {
            points.push(t);
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NQueries,
    Qpd,
    Omega,
    K,
    Delta,
    H,
    /// MemFree n-gram width; 0 disables the constraint.
    Memfree,
}

impl Axis {
    pub const ALL: [Axis; 7] = [
        Axis::NQueries,
        Axis::Qpd,
        Axis::Omega,
        Axis::K,
        Axis::Delta,
        Axis::H,
        Axis::Memfree,
    ];

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::NQueries => vec![10.0, 20.0, 50.0, 100.0, 200.0],
            Axis::Qpd => vec![1.0, 2.0, 4.0, 8.0],
            Axis::Omega => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            Axis::K => vec![1.0, 3.0, 5.0, 10.0],
            Axis::Delta => (1..=13).map(|i| 0.5 * i as f64).collect(),
            Axis::H => vec![1.0, 2.0, 4.0],
            Axis::Memfree => vec![0.0, 20.0, 10.0, 5.0],
        }
    }

    /// Whether changing this axis changes the owner's watermarked documents.
    fn rewatermarks(self) -> bool {
        matches!(self, Axis::Delta | Axis::H)
    }

    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config(format!("{self} needs a non-negative integer, got {v}")))
            }
        };
        let mut out = cfg.clone();
        match self {
            Axis::NQueries => out.max_queries = count(value)?,
            Axis::Qpd => out.qpd = count(value)?,
            Axis::Omega => out.omega = value,
            Axis::K => out.k = count(value)?,
            Axis::Delta => out.wm.delta = value,
            Axis::H => out.wm.h = count(value)?,
            Axis::Memfree => out.memfree_n = Some(count(value)?).filter(|&n| n > 0),
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::NQueries => "n_queries",
            Axis::Qpd => "qpd",
            Axis::Omega => "omega",
            Axis::K => "k",
            Axis::Delta => "delta",
            Axis::H => "h",
            Axis::Memfree => "memfree",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Axis::ALL
            .into_iter()
            .find(|a| a.to_string() == norm)
            .ok_or_else(|| Error::config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub seed: u64,
    pub case: Case,
    pub final_z: Option<f64>,
    pub log10_p: f64,
    pub scored: u64,
    pub decision: Decision,
    pub correct: bool,
    pub queries_to_decision: Option<usize>,
}

/// IN and OUT audits at every `values` point of `axis` for every seed.
pub fn run_sweep(lab: &Lab, cfg: &ExperimentConfig, axis: Axis, values: &[f64], exec: Exec) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let points = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let per_seed = exec.map(&cfg.seeds, |&seed| -> Result<Vec<SweepRow>> {
        let split = lab.split(cfg, seed, exec)?;
        let shared = if axis.rewatermarks() {
            None
        } else {
            Some(lab.watermark(cfg, split.clone(), exec)?)
        };
        let mut rows = Vec::new();
        for (&value, point) in values.iter().zip(&points) {
            let own;
            let world = match &shared {
                Some(w) => w,
                None => {
                    own = lab.watermark(point, split.clone(), exec)?;
                    &own
                }
            };
            for case in Case::ALL {
                let report = run_case(point, world, case, exec)?;
                rows.push(SweepRow {
                    axis,
                    value,
                    seed,
                    case,
                    final_z: report.final_score.z,
                    log10_p: report.final_score.log10_p,
                    scored: report.final_score.scored_count,
                    decision: report.decision,
                    correct: report.decision == case.expected(),
                    queries_to_decision: report.queries_to_decision,
                });
            }
        }
        Ok(rows)
    });
    Ok(per_seed
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        for bad in [
            ExperimentConfig {
                scale: 0,
                ..cfg.clone()
            },
            ExperimentConfig {
                seeds: vec![],
                ..cfg.clone()
            },
            ExperimentConfig {
                omega: 1.5,
                ..cfg.clone()
            },
            ExperimentConfig { qpd: 0, ..cfg.clone() },
            ExperimentConfig { k: 0, ..cfg.clone() },
            ExperimentConfig {
                failure_rate: 1.0,
                ..cfg.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn axis_names_round_trip() {
        for a in Axis::ALL {
            assert_eq!(a.to_string().parse::<Axis>().unwrap(), a);
        }
        assert!("gamma".parse::<Axis>().is_err());
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ACC-FACTS".parse::<Method>().unwrap(), Method::AccFacts);
        assert!("zlib".parse::<Method>().is_err());
    }

    #[test]
    fn axis_application() {
        let cfg = ExperimentConfig::default();
        assert_eq!(Axis::Memfree.apply(&cfg, 0.0).unwrap().memfree_n, None);
        assert_eq!(Axis::Memfree.apply(&cfg, 10.0).unwrap().memfree_n, Some(10));
        assert_eq!(Axis::Delta.apply(&cfg, 2.5).unwrap().wm.delta, 2.5);
        assert!(Axis::K.apply(&cfg, 2.5).is_err());
        assert!(Axis::H.apply(&cfg, 0.0).is_err());
        assert_eq!(Axis::Delta.default_values().len(), 13);
    }

    #[test]
    fn universal_threshold_detection() {
        let pt = |profile, s, acc| CurvePoint {
            profile,
            similarity: s,
            perplexity: 10.0,
            accuracy: acc,
        };
        let curve = [
            pt(Profile::Naive, 0.1, 1.0),
            pt(Profile::Def, 0.1, 0.5),
            pt(Profile::Naive, 0.2, 1.0),
            pt(Profile::Def, 0.2, 1.0),
        ];
        assert_eq!(universal_thresholds(&curve).len(), 1);
        assert!(universal_thresholds(&curve[..2]).is_empty());
    }
}
