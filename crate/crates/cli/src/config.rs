//! Layered configuration: built-in defaults, then `RAGMARK_SEED`, then the
//! TOML file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ragmark::corpus::Setting;
use ragmark::experiment::ExperimentConfig;
use ragmark::lm_sim::Profile;
use ragmark::rag::Retriever;

use crate::Failure;

/// 64-bit values are accepted as TOML integers or as decimal / `0x` hex
/// strings, since TOML integers stop at `i64::MAX`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum U64Repr {
    Int(i64),
    Text(String),
}

impl U64Repr {
    fn from_u64(v: u64) -> Self {
        i64::try_from(v)
            .map(U64Repr::Int)
            .unwrap_or_else(|_| U64Repr::Text(format!("{v:#x}")))
    }

    fn hex(v: u64) -> Self {
        U64Repr::Text(format!("{v:#018x}"))
    }

    fn value(&self) -> Result<u64, String> {
        match self {
            U64Repr::Int(i) => u64::try_from(*i).map_err(|_| format!("{i} is negative")),
            U64Repr::Text(s) => parse_u64(s),
        }
    }
}

pub fn parse_u64(s: &str) -> Result<u64, String> {
    let t = s.trim().replace('_', "");
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|e| format!("invalid 64-bit value {s:?}: {e}"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub setting: Option<String>,
    pub scale: Option<usize>,
    pub profile: Option<String>,
    pub seeds: Option<Vec<U64Repr>>,
    pub vocab_size: Option<u32>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagSection {
    pub retriever: Option<String>,
    pub k: Option<usize>,
    /// 0 disables the n-gram blocking defense.
    pub memfree_n: Option<usize>,
    pub response_len: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSection {
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub h: Option<usize>,
    pub salt: Option<U64Repr>,
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub qpd: Option<usize>,
    pub max_queries: Option<usize>,
    pub alpha_log10: Option<f64>,
    pub omega: Option<f64>,
    pub owner_docs: Option<usize>,
    pub failure_rate: Option<f64>,
}

/// The on-disk configuration; also the shape echoed into every output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub rag: RagSection,
    #[serde(default)]
    pub watermark: WatermarkSection,
    #[serde(default)]
    pub audit: AuditSection,
}

/// Command-line overrides of every configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub setting: Option<String>,
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Comma-separated world seeds.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_u64)]
    pub seeds: Option<Vec<u64>>,
    /// Replaces the built-in single default seed list; the file and --seeds win over it.
    #[arg(long, global = true, env = "RAGMARK_SEED", value_parser = parse_u64)]
    pub default_seed: Option<u64>,
    #[arg(long, global = true)]
    pub vocab_size: Option<u32>,
    #[arg(long, global = true)]
    pub retriever: Option<String>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Maximum verbatim n-gram overlap allowed by the defense; 0 disables it.
    #[arg(long, global = true)]
    pub memfree_n: Option<usize>,
    #[arg(long, global = true)]
    pub response_len: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Context width of the watermark.
    #[arg(long, global = true)]
    pub h: Option<usize>,
    /// Secret watermark key (decimal or 0x hex).
    #[arg(long, global = true, value_parser = parse_u64)]
    pub salt: Option<u64>,
    #[arg(long, global = true)]
    pub fidelity: Option<f64>,
    #[arg(long, global = true)]
    pub qpd: Option<usize>,
    #[arg(long, global = true)]
    pub max_queries: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha_log10: Option<f64>,
    #[arg(long, global = true)]
    pub omega: Option<f64>,
    #[arg(long, global = true)]
    pub owner_docs: Option<usize>,
    #[arg(long, global = true)]
    pub failure_rate: Option<f64>,
}

impl Overrides {
    fn layer(&self) -> FileConfig {
        FileConfig {
            experiment: ExperimentSection {
                setting: self.setting.clone(),
                scale: self.scale,
                profile: self.profile.clone(),
                seeds: self
                    .seeds
                    .as_ref()
                    .map(|v| v.iter().map(|&s| U64Repr::from_u64(s)).collect()),
                vocab_size: self.vocab_size,
                output: self.out.clone(),
            },
            rag: RagSection {
                retriever: self.retriever.clone(),
                k: self.k,
                memfree_n: self.memfree_n,
                response_len: self.response_len,
            },
            watermark: WatermarkSection {
                gamma: self.gamma,
                delta: self.delta,
                h: self.h,
                salt: self.salt.map(U64Repr::from_u64),
                fidelity: self.fidelity,
            },
            audit: AuditSection {
                qpd: self.qpd,
                max_queries: self.max_queries,
                alpha_log10: self.alpha_log10,
                omega: self.omega,
                owner_docs: self.owner_docs,
                failure_rate: self.failure_rate,
            },
        }
    }
}

/// Fully merged configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    /// Whether a salt was supplied rather than defaulted.
    pub salt_given: bool,
    pub out: Option<PathBuf>,
}

impl Resolved {
    /// The effective configuration in file form.
    pub fn echo(&self) -> FileConfig {
        let c = &self.experiment;
        FileConfig {
            experiment: ExperimentSection {
                setting: Some(c.setting.to_string()),
                scale: Some(c.scale),
                profile: Some(c.profile.to_string()),
                seeds: Some(c.seeds.iter().map(|&s| U64Repr::from_u64(s)).collect()),
                vocab_size: Some(c.vocab_size),
                output: None,
            },
            rag: RagSection {
                retriever: Some(c.retriever.to_string()),
                k: Some(c.k),
                memfree_n: Some(c.memfree_n.unwrap_or(0)),
                response_len: Some(c.response_len),
            },
            watermark: WatermarkSection {
                gamma: Some(c.wm.gamma),
                delta: Some(c.wm.delta),
                h: Some(c.wm.h),
                salt: Some(U64Repr::hex(c.wm.salt)),
                fidelity: Some(c.fidelity),
            },
            audit: AuditSection {
                qpd: Some(c.qpd),
                max_queries: Some(c.max_queries),
                alpha_log10: Some(c.alpha_log10),
                omega: Some(c.omega),
                owner_docs: c.owner_docs,
                failure_rate: Some(c.failure_rate),
            },
        }
    }

    pub fn echo_toml(&self) -> String {
        toml::to_string(&self.echo()).expect("plain configuration serializes")
    }
}

fn parsed<T: std::str::FromStr>(v: &Option<String>, into: &mut T) -> Result<(), Failure>
where
    T::Err: std::fmt::Display,
{
    if let Some(s) = v {
        *into = s.parse().map_err(|e: T::Err| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn set<T: Clone>(v: &Option<T>, into: &mut T) {
    if let Some(x) = v {
        *into = x.clone();
    }
}

fn apply(layer: &FileConfig, r: &mut Resolved) -> Result<(), Failure> {
    let c = &mut r.experiment;
    let e = &layer.experiment;
    parsed::<Setting>(&e.setting, &mut c.setting)?;
    set(&e.scale, &mut c.scale);
    parsed::<Profile>(&e.profile, &mut c.profile)?;
    if let Some(seeds) = &e.seeds {
        c.seeds = seeds
            .iter()
            .map(U64Repr::value)
            .collect::<Result<_, _>>()
            .map_err(Failure::usage)?;
    }
    set(&e.vocab_size, &mut c.vocab_size);
    if e.output.is_some() {
        r.out = e.output.clone();
    }

    parsed::<Retriever>(&layer.rag.retriever, &mut c.retriever)?;
    set(&layer.rag.k, &mut c.k);
    if let Some(n) = layer.rag.memfree_n {
        c.memfree_n = (n > 0).then_some(n);
    }
    set(&layer.rag.response_len, &mut c.response_len);

    let w = &layer.watermark;
    set(&w.gamma, &mut c.wm.gamma);
    set(&w.delta, &mut c.wm.delta);
    set(&w.h, &mut c.wm.h);
    if let Some(s) = &w.salt {
        c.wm.salt = s.value().map_err(Failure::usage)?;
        r.salt_given = true;
    }
    set(&w.fidelity, &mut c.fidelity);

    let a = &layer.audit;
    set(&a.qpd, &mut c.qpd);
    set(&a.max_queries, &mut c.max_queries);
    set(&a.alpha_log10, &mut c.alpha_log10);
    set(&a.omega, &mut c.omega);
    if a.owner_docs.is_some() {
        c.owner_docs = a.owner_docs;
    }
    set(&a.failure_rate, &mut c.failure_rate);
    Ok(())
}

pub fn read_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Merges every layer and validates the result.
pub fn resolve(flags: &Overrides) -> Result<Resolved, Failure> {
    let mut r = Resolved {
        experiment: ExperimentConfig::default(),
        salt_given: false,
        out: None,
    };
    if let Some(seed) = flags.default_seed {
        r.experiment.seeds = vec![seed];
    }
    if let Some(path) = &flags.config {
        apply(&read_file(path)?, &mut r)?;
    }
    apply(&flags.layer(), &mut r)?;
    r.experiment.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(r)
}
