use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError};
use crate::narrative::JsonlLog;

pub const MANIFEST_FILE: &str = "manifest.json";
const LOG_DIR: &str = "logs";

/// Run record written next to the outputs. Holds no timestamps so two runs
/// with the same config and seeds produce identical manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub stages: BTreeSet<String>,
    /// Relative path → SHA-256 for every output outside `logs/`.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutputDir {
    root: PathBuf,
}

fn io(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::data("output", format!("{}: {e}", path.display()))
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, with parent directories created.
    pub fn file(&self, rel: &str) -> Result<PathBuf, HarnessError> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        Ok(p)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf, HarnessError> {
        let p = self.file(rel)?;
        fs::write(&p, text).map_err(|e| io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> Result<PathBuf, HarnessError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::data("output", e))?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    pub fn llm_log(&self) -> Result<JsonlLog, HarnessError> {
        Ok(JsonlLog::new(self.file(&format!("{LOG_DIR}/llm.jsonl"))?))
    }

    pub fn read_manifest(&self) -> Option<Manifest> {
        let text = fs::read_to_string(self.root.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Add `stage` to the manifest and rehash the outputs.
    pub fn record_stage(&self, cfg: &ExperimentConfig, stage: &str) -> Result<Manifest, HarnessError> {
        let sha = cfg.sha256();
        let mut m = self
            .read_manifest()
            .filter(|m| m.config_sha256 == sha && m.seeds == cfg.seeds)
            .unwrap_or_default();
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.config_sha256 = sha;
        m.seeds = cfg.seeds.clone();
        m.stages.insert(stage.to_string());
        m.outputs.clear();
        let mut files = Vec::new();
        collect_files(&self.root, &mut files).map_err(|e| io(&self.root, e))?;
        for p in files {
            let rel = rel_path(&self.root, &p);
            if rel == MANIFEST_FILE || rel.starts_with(&format!("{LOG_DIR}/")) {
                continue;
            }
            let bytes = fs::read(&p).map_err(|e| io(&p, e))?;
            m.outputs.insert(rel, sha256_hex(&bytes));
        }
        self.write_json(MANIFEST_FILE, &m)?;
        Ok(m)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn rel_path(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
