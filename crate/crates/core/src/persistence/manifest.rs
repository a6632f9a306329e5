use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::checkpoint::ArtifactEntry;
use super::report::to_canonical_json;
use super::sha256_hex;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `runs/<run-id>/` with its fixed subdirectories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Create (or reuse) the run directory and its subdirectories.
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "reports", "plotdata", "data"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn plotdata(&self) -> PathBuf {
        self.root.join("plotdata")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
}

/// Provenance of one run: what produced it and the hash of every file it
/// wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub command: String,
    pub code_version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<ArtifactEntry>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(run_id: &str, command: &str, config_text: &str) -> Self {
        Self {
            schema_version: super::MANIFEST_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn seed(&mut self, purpose: &str, seed: u64) {
        self.seeds.insert(purpose.to_string(), seed);
    }

    /// Hash a file inside `run` and record it by its relative path,
    /// replacing an older entry for the same path.
    pub fn record(&mut self, run: &RunDir, path: &Path) -> Result<&ArtifactEntry> {
        let rel = path.strip_prefix(&run.root).unwrap_or(path);
        let rel = rel.to_string_lossy().replace('\\', "/");
        let bytes = std::fs::read(path)?;
        let entry = ArtifactEntry {
            path: rel.clone(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        };
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(entry);
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(self
            .artifacts
            .iter()
            .find(|a| a.path == rel)
            .expect("just inserted"))
    }

    pub fn save(&mut self, run: &RunDir) -> Result<()> {
        self.finished_unix = Some(now());
        std::fs::write(run.manifest(), to_canonical_json(self)?)?;
        Ok(())
    }

    /// Read a manifest and check that every artifact exists with its
    /// recorded hash.
    pub fn load(run: &RunDir) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(run.manifest())?)?;
        if m.schema_version != super::MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: super::MANIFEST_SCHEMA_VERSION,
                found: m.schema_version,
            });
        }
        for a in &m.artifacts {
            let p = run.root.join(&a.path);
            let bytes = std::fs::read(&p)
                .map_err(|e| Error::Integrity(format!("artifact {} unreadable: {e}", a.path)))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Integrity(format!(
                    "artifact {} does not match its recorded hash",
                    a.path
                )));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recorded_artifacts_are_verified_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(&dir.path().join("runs/r1")).unwrap();
        let f = run.reports().join("a.json");
        std::fs::write(&f, "{}\n").unwrap();
        let mut m = RunManifest::new("r1", "scan", "[experiment]\n");
        m.seed("master", 7);
        m.record(&run, &f).unwrap();
        m.record(&run, &f).unwrap();
        assert_eq!(m.artifacts.len(), 1);
        assert_eq!(m.artifacts[0].path, "reports/a.json");
        m.save(&run).unwrap();
        let back = RunManifest::load(&run).unwrap();
        assert_eq!(back.seeds["master"], 7);

        std::fs::write(&f, "{ }\n").unwrap();
        assert!(matches!(RunManifest::load(&run), Err(Error::Integrity(_))));
        std::fs::remove_file(&f).unwrap();
        assert!(matches!(RunManifest::load(&run), Err(Error::Integrity(_))));
    }
}
