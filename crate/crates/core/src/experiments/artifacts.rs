//! Output directory handling: every file goes through one writer that records
//! its SHA-256, and the run ends with a JSON manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub experiment: Option<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub files: Vec<FileEntry>,
    /// Scalar summaries of the run (errors, correlations, variances).
    pub metrics: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects files and metrics for one run.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    metrics: BTreeMap<String, f64>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), metrics: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Render into memory, write, and record the hash.
    pub fn write(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        std::fs::write(self.dir.join(name), &buf)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(&buf), bytes: buf.len() as u64 });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn metrics(&self) -> &BTreeMap<String, f64> {
        &self.metrics
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Write `manifest.json` and return it.
    pub fn finish(
        self,
        command: &str,
        experiment: Option<&str>,
        seed: u64,
        config_bytes: &[u8],
        wall_time_s: f64,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            experiment: experiment.map(str::to_string),
            seed,
            config_sha256: sha256_hex(config_bytes),
            files: self.files,
            metrics: self.metrics,
            wall_time_s,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST_NAME), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_match_file_contents() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("a.csv", |b| b.write_all(b"x,y\n1,2\n")).unwrap();
        w.metric("err", 0.5);
        let m = w.finish("test", None, 7, b"cfg", 0.0).unwrap();
        let bytes = std::fs::read(dir.path().join("a.csv")).unwrap();
        assert_eq!(m.files[0].sha256, sha256_hex(&bytes));
        assert_eq!(m.files[0].bytes, bytes.len() as u64);
        let back: Manifest =
            serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
