//! Output directory with a content-hash manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path → SHA-256 of the file contents (hex).
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `<out>/<experiment>/`, recording every file written through it.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    manifest: Manifest,
}

impl ArtifactDir {
    /// Creates the directory and picks up an existing manifest.
    pub fn open(out: &Path, experiment: &str) -> Result<Self> {
        let root = out.join(experiment);
        std::fs::create_dir_all(&root).io_context(|| format!("creating {}", root.display()))?;
        let manifest = match std::fs::read(root.join(MANIFEST)) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(_) => Manifest::default(),
        };
        Ok(ArtifactDir { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).io_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, bytes).io_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        self.flush()?;
        Ok(path)
    }

    /// Records a file that something else already wrote under the root.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path).io_context(|| format!("reading {}", path.display()))?;
        self.manifest.artifacts.insert(rel.to_string(), sha256_hex(&bytes));
        self.flush()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn flush(&self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).io_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_tracks_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ArtifactDir::open(dir.path(), "exp").unwrap();
        a.write("x/y.csv", b"1,2\n").unwrap();
        let again = ArtifactDir::open(dir.path(), "exp").unwrap();
        assert_eq!(again.manifest().artifacts["x/y.csv"], sha256_hex(b"1,2\n"));
    }
}
