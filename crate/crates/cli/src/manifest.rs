//! Run manifest and the per-stage digest cache.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";
const CACHE_DIR: &str = ".cache";

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut f = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_str(s: &str) -> String {
    hex(&Sha256::digest(s.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Peak resident set size of this process so far, in KiB (Linux only).
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl OutputRecord {
    pub fn of(root: &Path, rel: &Path) -> anyhow::Result<Self> {
        let full = root.join(rel);
        Ok(Self {
            path: rel.to_path_buf(),
            sha256: sha256_file(&full)?,
            bytes: std::fs::metadata(&full)?.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    /// Inputs and parameters unchanged since a previous run; nothing recomputed.
    Cached,
    /// Finished, but some units (e.g. one cancer type's network) failed.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    /// What failed, e.g. `genes/COAD`.
    pub scope: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub cache_key: String,
    pub wall_seconds: f64,
    pub peak_rss_kib: Option<u64>,
    pub outputs: Vec<OutputRecord>,
    pub errors: Vec<StageError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub tsne: u64,
    pub gmm: u64,
    /// Restart `r` of the mixture fit uses `gmm + r`.
    pub gmm_restart_rule: String,
    pub betweenness_sampling: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub threads: usize,
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub input_digests: Vec<OutputRecord>,
    pub stages: Vec<StageRecord>,
    pub total_wall_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, root: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(root.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn read(root: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(root.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    outputs: Vec<OutputRecord>,
}

fn cache_path(root: &Path, stage: Stage) -> PathBuf {
    root.join(CACHE_DIR).join(format!("{stage}.json"))
}

/// Outputs recorded for `stage` under `key`, if all of them are still on disk
/// with matching digests.
pub fn cache_lookup(root: &Path, stage: Stage, key: &str) -> Option<Vec<OutputRecord>> {
    let text = std::fs::read_to_string(cache_path(root, stage)).ok()?;
    let entry: CacheEntry = serde_json::from_str(&text).ok()?;
    if entry.key != key {
        return None;
    }
    for o in &entry.outputs {
        if sha256_file(&root.join(&o.path)).ok()? != o.sha256 {
            return None;
        }
    }
    Some(entry.outputs)
}

pub fn cache_store(root: &Path, stage: Stage, key: &str, outputs: &[OutputRecord]) -> anyhow::Result<()> {
    let path = cache_path(root, stage);
    std::fs::create_dir_all(path.parent().unwrap())?;
    let entry = CacheEntry {
        key: key.to_string(),
        outputs: outputs.to_vec(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&entry)?)?;
    Ok(())
}

pub fn cache_invalidate(root: &Path, stage: Stage) {
    let _ = std::fs::remove_file(cache_path(root, stage));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_string() {
        assert_eq!(sha256_str("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn cache_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("out.csv"), "a,b\n").unwrap();
        let rec = OutputRecord::of(root, Path::new("out.csv")).unwrap();
        cache_store(root, Stage::Load, "k1", &[rec]).unwrap();
        assert!(cache_lookup(root, Stage::Load, "k1").is_some());
        assert!(cache_lookup(root, Stage::Load, "k2").is_none());
        std::fs::write(root.join("out.csv"), "a,c\n").unwrap();
        assert!(cache_lookup(root, Stage::Load, "k1").is_none());
    }

    #[test]
    fn peak_rss_is_reported_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(peak_rss_kib().unwrap() > 0);
        }
    }
}
