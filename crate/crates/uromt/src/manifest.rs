//! `manifest.json`: configuration snapshot, SHA-256 digests of every input and
//! output file, per-loop solver outcomes and wall-clock timings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RawConfig;
use crate::error::{Error, Result};
use crate::volume::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory for outputs, as given for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub index: usize,
    pub termination: String,
    pub iterations: usize,
    pub negative_source_voxels: usize,
    pub final_cost: CostRecord,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub config: RawConfig,
    pub inputs: Vec<FileRecord>,
    pub loops: Vec<LoopRecord>,
    /// Diagnostic of a loop that failed; the loops before it are listed above.
    pub failure: Option<String>,
    pub solve_seconds: f64,
    /// Later stages (`post`, `metrics`) in the order they ran.
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: RawConfig) -> Self {
        Self {
            software: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            config,
            inputs: Vec::new(),
            loops: Vec::new(),
            failure: None,
            solve_seconds: 0.0,
            stages: Vec::new(),
        }
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(Error::io(&path))?;
        serde_json::from_slice(&text).map_err(|source| Error::Json { path, source })
    }

    pub fn write(&self, run_dir: &Path) -> Result<PathBuf> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_vec_pretty(self).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        text.push(b'\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }

    /// Replaces any earlier stage of the same name.
    pub fn set_stage(&mut self, stage: StageRecord) {
        self.stages.retain(|s| s.name != stage.name);
        self.stages.push(stage);
    }

    /// Every output path with its digest, independent of timings.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.loops
            .iter()
            .flat_map(|l| &l.files)
            .chain(self.stages.iter().flat_map(|s| &s.files))
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(Error::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(Error::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Digest of `path`, recorded relative to `base` when it lies below it.
pub fn record(base: &Path, path: &Path) -> Result<FileRecord> {
    let rel = path.strip_prefix(base).unwrap_or(path);
    Ok(FileRecord {
        path: rel.to_string_lossy().replace('\\', "/"),
        sha256: sha256_file(path)?,
    })
}

/// Checks every recorded output against the files now on disk and returns
/// the paths that are missing or differ.
pub fn verify(run_dir: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .output_digests()
        .into_iter()
        .filter(|(path, digest)| sha256_file(&run_dir.join(path)).ok().as_ref() != Some(digest))
        .map(|(path, _)| path)
        .collect()
}
