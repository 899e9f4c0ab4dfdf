//! On-disk split format: a directory holding `documents.jsonl` (corpus and
//! held-out owner documents, one JSON object per line), `groups.jsonl`,
//! `originals.jsonl` for watermarked splits and `manifest.json`. Every file
//! is written to a temporary sibling and renamed, the manifest last, so a
//! reader never sees a half-written split.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Document, ExperimentSplit, Group, Setting};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;
const DOCUMENTS: &str = "documents.jsonl";
const GROUPS: &str = "groups.jsonl";
const ORIGINALS: &str = "originals.jsonl";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub setting: Setting,
    pub scale: usize,
    pub seed: u64,
    pub vocab_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salt_fingerprint: Option<String>,
    pub document_count: usize,
    pub group_count: usize,
    pub owner_in: Vec<String>,
    pub owner_out: Vec<String>,
    pub corpus: Vec<String>,
    /// Ids in `originals.jsonl`, present once the owner's data is watermarked.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub originals: Vec<String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        // Plain data structs; serialization cannot fail.
        serde_json::to_writer(&mut out, &item).expect("serializable record");
        out.push(b'\n');
    }
    out
}

/// Writes `split` into directory `dir`, creating it if needed.
pub fn save_corpus(split: &ExperimentSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let docs: Vec<&Document> = split.corpus.iter().chain(&split.owner_out).collect();
    let ids = |v: &[Document]| v.iter().map(|d| d.doc_id.clone()).collect::<Vec<_>>();
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        setting: split.setting,
        scale: split.scale,
        seed: split.seed,
        vocab_size: split.vocab_size,
        salt_fingerprint: split.salt_fingerprint.clone(),
        document_count: docs.len(),
        group_count: split.groups.len(),
        owner_in: ids(&split.owner_in),
        owner_out: ids(&split.owner_out),
        corpus: ids(&split.corpus),
        originals: ids(&split.originals),
    };
    write_atomic(&dir.join(DOCUMENTS), &jsonl(docs))?;
    write_atomic(&dir.join(GROUPS), &jsonl(&split.groups))?;
    let originals_path = dir.join(ORIGINALS);
    if split.originals.is_empty() {
        if originals_path.exists() {
            fs::remove_file(&originals_path).map_err(|e| Error::io(&originals_path, e))?;
        }
    } else {
        write_atomic(&originals_path, &jsonl(&split.originals))?;
    }
    let mut m = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
    m.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &m)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(parse_err(
            text.lines().count(),
            "file is truncated (no trailing newline)".into(),
        ));
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string())))
        .collect()
}

/// Reads the manifest alone.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(Error::Mismatch(format!(
            "{}: schema {} unsupported (expected {MANIFEST_SCHEMA})",
            path.display(),
            manifest.schema
        )));
    }
    Ok(manifest)
}

/// Reads a split written by [`save_corpus`] and checks it for completeness.
pub fn load_corpus(dir: &Path) -> Result<ExperimentSplit> {
    let manifest = read_manifest(dir)?;
    let docs_path: PathBuf = dir.join(DOCUMENTS);
    let docs: Vec<Document> = read_jsonl(&docs_path)?;
    let mut groups: Vec<Group> = read_jsonl(&dir.join(GROUPS))?;
    if docs.len() != manifest.document_count || groups.len() != manifest.group_count {
        return Err(Error::Mismatch(format!(
            "{}: manifest lists {} documents and {} groups, found {} and {}",
            dir.display(),
            manifest.document_count,
            manifest.group_count,
            docs.len(),
            groups.len()
        )));
    }
    for g in &groups {
        g.validate()?;
    }
    groups.sort_by_key(|g| g.group_id);
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let resolve = |ids: &[String]| -> Result<Vec<Document>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|d| (*d).clone())
                    .ok_or_else(|| Error::Mismatch(format!("{}: unknown document id {id}", docs_path.display())))
            })
            .collect()
    };
    let originals: Vec<Document> = if manifest.originals.is_empty() {
        Vec::new()
    } else {
        let path = dir.join(ORIGINALS);
        let originals: Vec<Document> = read_jsonl(&path)?;
        let found: Vec<&str> = originals.iter().map(|d| d.doc_id.as_str()).collect();
        if found != manifest.originals {
            return Err(Error::Mismatch(format!(
                "{}: documents disagree with the manifest",
                path.display()
            )));
        }
        originals
    };
    let split = ExperimentSplit {
        setting: manifest.setting,
        scale: manifest.scale,
        seed: manifest.seed,
        vocab_size: manifest.vocab_size,
        salt_fingerprint: manifest.salt_fingerprint.clone(),
        owner_in: resolve(&manifest.owner_in)?,
        owner_out: resolve(&manifest.owner_out)?,
        corpus: resolve(&manifest.corpus)?,
        groups,
        originals,
    };
    split.validate()?;
    Ok(split)
}
