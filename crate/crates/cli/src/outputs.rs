//! All-or-nothing output writing. Commands assemble every report in memory
//! first; `commit` then writes the files and, if any single write fails,
//! removes the ones from this run so a nonzero exit never leaves partial
//! outputs behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    /// Writes every file into `dir` (created if needed) in insertion order.
    /// On the first failure all files already written by this call are
    /// removed before the error is returned.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let mut written: Vec<PathBuf> = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(err) = fs::write(&path, bytes) {
                for touched in &written {
                    let _ = fs::remove_file(touched);
                }
                return Err(err).with_context(|| format!("writing {}", path.display()));
            }
            written.push(path);
        }
        Ok(written)
    }
}
