//! Run directories: every artifact is written through a [`RunWriter`],
//! which records its hash; the manifest goes last.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::shallow::Verdict;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub generator: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub config_sha256: String,
    /// Unix time in milliseconds.
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    /// `complete`, or `partial` when the run failed part way.
    pub status: String,
    #[serde(default)]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
    pub verdicts: Vec<Verdict>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.status == "complete" && self.verdicts.iter().all(|v| v.passed)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct RunWriter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl RunWriter {
    /// Prepare `dir`; any stale manifest is removed first so the directory
    /// never describes files from an earlier run.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let stale = dir.join(MANIFEST_FILE);
        if stale.exists() {
            std::fs::remove_file(&stale)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write `bytes` to `rel` (a relative path inside the run directory).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let rel_path = Path::new(rel);
        if rel_path.is_absolute() || rel_path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(Error::invalid(format!("artifact path {rel} escapes the run directory")));
        }
        if rel == MANIFEST_FILE {
            return Err(Error::invalid("the manifest is written by finish()"));
        }
        io::write_atomic(&self.dir.join(rel_path), bytes)?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: io::sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_str(&mut self, rel: &str, text: &str) -> Result<()> {
        self.write(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write_str(rel, &io::to_json_string(value)?)
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        let mut artifacts = self.artifacts;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.artifacts = artifacts;
        manifest.finished_at_ms = now_ms();
        io::write_json(&self.dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::NoManifest(dir.to_path_buf()));
    }
    io::read_json(&path)
}

/// Re-hash every listed artifact.
pub fn verify_artifacts(dir: &Path, manifest: &RunManifest) -> Result<()> {
    for a in &manifest.artifacts {
        let found = io::sha256_file(&dir.join(&a.path)).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Integrity {
                file: a.path.clone(),
                expected: a.sha256.clone(),
                found: "missing".into(),
            },
            other => other,
        })?;
        if found != a.sha256 {
            return Err(Error::Integrity {
                file: a.path.clone(),
                expected: a.sha256.clone(),
                found,
            });
        }
    }
    Ok(())
}

/// Human-readable summary of a verified run directory.
pub fn report_text(dir: &Path) -> Result<(String, RunManifest)> {
    let manifest = read_manifest(dir)?;
    verify_artifacts(dir, &manifest)?;
    let mut out = String::new();
    out.push_str(&format!(
        "run {} ({} {}), experiment {}, seeds {:?}\n",
        dir.display(),
        manifest.tool,
        manifest.tool_version,
        manifest.experiment,
        manifest.seeds
    ));
    out.push_str(&format!(
        "status {}, {} artifacts verified\n",
        manifest.status,
        manifest.artifacts.len()
    ));
    if let Some(err) = &manifest.error {
        out.push_str(&format!("error: {err}\n"));
    }
    for v in &manifest.verdicts {
        out.push_str(&v.line());
        out.push('\n');
    }
    if manifest.verdicts.is_empty() {
        out.push_str("no verdicts recorded\n");
    }
    Ok((out, manifest))
}
