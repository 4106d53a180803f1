//! Artifact writing. Every run leaves a `manifest.json` listing the resolved
//! configuration and the SHA-256 of each artifact; wall-clock timings go to a
//! separate `timing.json` that the manifest does not cover.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Category, CategoryExt};

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

#[derive(Debug, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: &'a C,
    artifacts: &'a [ArtifactEntry],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<ArtifactEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).category(Category::Io)?;
        Ok(Self { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let bytes = bytes.as_ref();
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| format!("writing {}: {e}", path.display())).category(Category::Io)?;
        self.artifacts.push(ArtifactEntry { file: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_timing(&self, seconds: f64, detail: serde_json::Value) -> anyhow::Result<()> {
        let body = serde_json::json!({ "total_seconds": seconds, "detail": detail });
        fs::write(self.path(TIMING), body.to_string()).category(Category::Io)
    }

    pub fn finish<C: Serialize>(self, command: &str, seed: Option<u64>, config: &C) -> anyhow::Result<Vec<ArtifactEntry>> {
        let manifest = Manifest { command, version: env!("CARGO_PKG_VERSION"), seed, config, artifacts: &self.artifacts };
        let json = serde_json::to_string_pretty(&manifest).category(Category::Io)?;
        fs::write(self.path(MANIFEST), json + "\n").category(Category::Io)?;
        Ok(self.artifacts)
    }
}
