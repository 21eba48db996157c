//! Run manifests.
//!
//! Every stage writes a manifest recording what it consumed and produced:
//! input checksums, output paths, seed, and timestamps. Manifests carry
//! wall-clock data, so they live under `manifests/` where determinism
//! checks can skip them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stage: String,
    pub started_at: String,
    pub finished_at: String,
    pub seed: u64,
    /// Path -> sha256 of every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Paths the stage wrote, relative to the output directory.
    pub outputs: Vec<String>,
}

/// Accumulates manifest data while a stage runs.
pub struct ManifestBuilder {
    stage: String,
    started_at: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(stage: &str, seed: u64) -> Self {
        ManifestBuilder {
            stage: stage.to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Records an input file with its current checksum.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records an output path relative to the run's output directory.
    pub fn output(&mut self, out_dir: &Path, path: &Path) {
        let shown = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(shown.display().to_string());
    }

    /// Writes `manifests/<stage>.json` under the output directory.
    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.outputs.sort();
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: self.stage,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let dir = out_dir.join("manifests");
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.json", manifest.stage));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Streaming sha256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
