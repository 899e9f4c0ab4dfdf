//! Output directories are built in a hidden sibling and swapped in whole,
//! so an interrupted run never leaves a mixed or half-written directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::Failure;

/// Version of every CSV layout written by the CLI; the first column of each row.
pub const CSV_SCHEMA: u32 = 1;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

#[derive(Debug)]
pub struct Staging {
    target: PathBuf,
    tmp: PathBuf,
    committed: bool,
}

impl Staging {
    /// Refuses a non-empty `target` unless `force` is set.
    pub fn begin(target: &Path, force: bool) -> Result<Self, Failure> {
        let occupied = match fs::read_dir(target) {
            Ok(mut entries) => entries.next().is_some(),
            Err(_) => target.exists(),
        };
        if occupied && !force {
            return Err(Failure::usage(format!(
                "output {} already exists; pass --force to replace it",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .ok_or_else(|| Failure::usage(format!("invalid output path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_failure(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| io_failure(&tmp, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            tmp,
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.tmp
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        let path = self.tmp.join(name);
        fs::write(&path, contents).map_err(|e| io_failure(&path, e))
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::internal(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    /// Moves the staged directory into place, replacing any previous one.
    pub fn commit(mut self) -> Result<PathBuf, Failure> {
        let old = self.tmp.with_file_name(
            self.tmp
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .replace(".partial-", ".old-"),
        );
        let replaced = self.target.exists();
        if replaced {
            fs::rename(&self.target, &old).map_err(|e| io_failure(&self.target, e))?;
        }
        fs::rename(&self.tmp, &self.target).map_err(|e| io_failure(&self.target, e))?;
        self.committed = true;
        if replaced {
            let _ = if old.is_dir() {
                fs::remove_dir_all(&old)
            } else {
                fs::remove_file(&old)
            };
        }
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

/// CSV text with the schema column prepended to the header and every row.
pub fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("schema_version,{header}\n");
    for row in rows {
        out.push_str(&format!("{CSV_SCHEMA},{row}\n"));
    }
    out
}

pub fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
