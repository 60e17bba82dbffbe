//! Artifacts are collected in memory and written only once a command has
//! succeeded, so a failing run leaves no partial output behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_text(&mut self, name: impl Into<PathBuf>, text: impl Into<String>) {
        self.add(name, text.into().into_bytes());
    }

    /// Captures whatever `f` writes into a buffer.
    pub fn add_with<F>(&mut self, name: impl Into<PathBuf>, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> ticktack_core::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add_text(name, text);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|f| f.0.as_path())
    }

    /// Writes every file plus the resolved configuration into `dir`.
    pub fn commit(self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let config = std::iter::once((PathBuf::from(CONFIG_FILE), cfg.to_toml().into_bytes()));
        for (name, bytes) in self.files.into_iter().chain(config) {
            let path = dir.join(&name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
