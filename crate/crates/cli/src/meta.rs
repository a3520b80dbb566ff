//! Run metadata written next to every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub config_digest: String,
    /// SHA-256 of every input file, or of a directory's sorted contents.
    pub inputs: BTreeMap<String, String>,
    pub versions: BTreeMap<&'static str, String>,
    pub threads: Option<usize>,
    /// Command-specific numbers (final loss, mAP, removal fraction).
    pub summary: Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut hasher = Sha256::new();
        for rel in files {
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(path.join(&rel)).with_context(|| format!("reading {}", rel.display()))?);
        }
        Ok(hex::encode(hasher.finalize()))
    } else {
        Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != "run.json") {
            out.push(path.strip_prefix(root).expect("walked under root").to_path_buf());
        }
    }
    Ok(())
}

impl RunMeta {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize, inputs: &[&Path], threads: Option<usize>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let config_digest = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), digest_path(p)?)))
            .collect::<Result<_>>()?;
        let versions = BTreeMap::from([
            ("zed", env!("CARGO_PKG_VERSION").to_string()),
            ("feature_format", zed_core::io::FEATURE_VERSION.to_string()),
            ("stopwords", zed_core::text::STOPWORDS_VERSION.to_string()),
        ]);
        Ok(Self { command: command.into(), seed, config, config_digest, inputs, versions, threads, summary: Value::Null })
    }

    pub fn with_summary(mut self, summary: Value) -> Self {
        self.summary = summary;
        self
    }

    /// `run.json` inside an output directory, else `<file>.run.json`.
    pub fn location(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join("run.json")
        } else {
            let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".run.json");
            output.with_file_name(name)
        }
    }

    pub fn write_next_to(&self, output: &Path) -> Result<()> {
        let path = Self::location(output);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
