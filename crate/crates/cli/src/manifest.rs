//! Run manifests and atomic output writes.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub version: String,
    /// SHA-256 over the listed outputs, each hashed as its relative path,
    /// a NUL byte, its length and its contents.
    pub output_digest: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, inputs: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seed: config.seed,
            inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            output_digest: String::new(),
            outputs: Vec::new(),
        }
    }

    /// Digests `outputs` (relative to `root`) and writes the manifest to `path`.
    pub fn finish(mut self, root: &Path, mut outputs: Vec<PathBuf>, path: &Path) -> Result<Self> {
        outputs.sort();
        self.output_digest = digest_files(root, &outputs)?;
        self.outputs = outputs;
        write_atomic(path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_files(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for rel in files {
        let bytes = std::fs::read(root.join(rel)).with_context(|| format!("reading {}", root.join(rel).display()))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_names_and_contents() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), b"xy").unwrap();
        std::fs::write(dir.path().join("b"), b"z").unwrap();
        let d1 = digest_files(dir.path(), &["a".into(), "b".into()]).unwrap();
        std::fs::write(dir.path().join("b"), b"w").unwrap();
        let d2 = digest_files(dir.path(), &["a".into(), "b".into()]).unwrap();
        assert_ne!(d1, d2);
        assert_eq!(d1.len(), 64);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_atomic(&p, b"{}").unwrap();
        write_atomic(&p, b"[]").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"[]");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
