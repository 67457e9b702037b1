//! Output-directory layout, JSON/CSV helpers and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use capsim_core::tokenizer::{vocab, VOCAB_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::{PipelineError, Result};

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub fn mkdirs(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(require(path)?).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact(path.to_path_buf()))
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Layout {
        Layout { root: root.to_path_buf() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }
    pub fn program(&self, set: &str, member: &str) -> PathBuf {
        self.traces().join(set).join(format!("{member}.program.json"))
    }
    pub fn trace(&self, set: &str, member: &str, k: usize) -> PathBuf {
        self.traces().join(set).join(format!("{member}-{k}.trace.jsonl"))
    }
    pub fn gen_summary(&self) -> PathBuf {
        self.traces().join("gen.json")
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn clips(&self) -> PathBuf {
        self.corpus().join("corpus.clips.jsonl")
    }
    pub fn snapshots(&self) -> PathBuf {
        self.corpus().join("corpus.snapshots.jsonl")
    }
    pub fn sampler_report(&self) -> PathBuf {
        self.corpus().join("sampler_report.json")
    }
    pub fn split(&self, name: &str) -> PathBuf {
        self.corpus().join(format!("{name}.enc.jsonl"))
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn loss_curves(&self) -> PathBuf {
        self.root.join("loss_curves.csv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }
    pub fn crossval(&self) -> PathBuf {
        self.root.join("crossval")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub vocab_version: String,
    pub vocab_hash: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Derived seeds by purpose.
    pub seeds: BTreeMap<String, u64>,
    /// Commands run against this directory, in order.
    pub commands: Vec<String>,
    /// Relative path → SHA-256 of every artifact.
    pub artifacts: BTreeMap<String, String>,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Rewrites manifest.json after `command`, rehashing everything under root.
pub fn update_manifest(layout: &Layout, cfg: &PipelineConfig, command: &str, seeds: &[(&str, u64)]) -> Result<Manifest> {
    let path = layout.manifest();
    let mut m: Manifest = if path.exists() { read_json(&path)? } else { Manifest::default() };
    m.tool = "capsim".into();
    m.version = env!("CARGO_PKG_VERSION").into();
    m.vocab_version = VOCAB_VERSION.into();
    m.vocab_hash = vocab().hash().into();
    m.config_sha256 = sha256_hex(toml::to_string(cfg).map_err(|e| PipelineError::Config(e.to_string()))?.as_bytes());
    m.seed = cfg.seed;
    for (k, v) in seeds {
        m.seeds.insert((*k).into(), *v);
    }
    m.commands.push(command.into());
    let mut files = Vec::new();
    walk(&layout.root, &mut files)?;
    files.sort();
    m.artifacts.clear();
    for f in files {
        if f == path {
            continue;
        }
        let bytes = std::fs::read(&f).map_err(io_err(&f))?;
        let rel = f.strip_prefix(&layout.root).expect("under root").to_string_lossy().replace('\\', "/");
        m.artifacts.insert(rel, sha256_hex(&bytes));
    }
    write_json(&path, &m)?;
    Ok(m)
}
