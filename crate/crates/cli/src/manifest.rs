//! Run manifest: configuration digest, timings and a digest inventory of
//! every file a command wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory for outputs, as given for inputs.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seed: u64,
    pub timings: Vec<Timing>,
    pub inputs: Vec<FileEntry>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_sha256,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timings: Vec::new(),
            inputs: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    /// Records outputs under `out_dir`, sorted by path.
    pub fn add_outputs(&mut self, out_dir: &Path, paths: &[PathBuf]) -> CliResult<()> {
        for p in paths {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            let (sha256, bytes) = sha256_file(p)?;
            self.files.push(FileEntry {
                path: rel.display().to_string(),
                sha256,
                bytes,
            });
        }
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files.dedup_by(|a, b| a.path == b.path);
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(out_dir: &Path) -> CliResult<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Re-hashes every listed output and input.
    pub fn verify(&self, out_dir: &Path) -> CliResult<()> {
        let outputs = self.files.iter().map(|f| (out_dir.join(&f.path), f));
        let inputs = self.inputs.iter().map(|f| (PathBuf::from(&f.path), f));
        for (path, entry) in outputs.chain(inputs) {
            let (sha256, bytes) = sha256_file(&path)?;
            if sha256 != entry.sha256 || bytes != entry.bytes {
                return Err(CliError::Check(format!("digest mismatch for {}", path.display())));
            }
        }
        Ok(())
    }

    /// `(path, digest)` pairs of the outputs.
    pub fn digests(&self) -> Vec<(String, String)> {
        self.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        fs::write(&a, "hello").unwrap();
        let mut m = RunManifest::new("test", "00".into(), 0);
        m.add_outputs(dir.path(), &[a.clone()]).unwrap();
        assert_eq!(m.files[0].path, "a.txt");
        assert_eq!(m.files[0].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        back.verify(dir.path()).unwrap();
        fs::write(&a, "hellO").unwrap();
        assert_eq!(back.verify(dir.path()).unwrap_err().exit_code(), 5);
    }
}
