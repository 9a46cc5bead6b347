//! Artifact directories and their manifests.
//!
//! Every command writes into its own output directory a `manifest.json` that
//! lists the files it produced with their SHA-256, the hashes of the upstream
//! artifacts it consumed and the run seed. Loading a directory re-hashes every
//! listed file before anything is parsed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use combipart::dataset::{Dataset, DatasetManifest, MANIFEST_FILE};
use combipart::hash::sha256_hex;
use combipart::{Error, GeoclassSet, RegionGraph};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Usage;

pub const GRAPH_FILE: &str = "graph.json";

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&[&bytes]))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    /// Upstream artifact name to the hash it had when consumed.
    pub inputs: BTreeMap<String, String>,
    /// Produced files, in a meaningful order (sets keep index order).
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub details: Value,
}

/// A verified artifact directory.
pub struct Stage {
    pub dir: PathBuf,
    pub manifest: StageManifest,
    /// Hash of the manifest file itself; downstream stages record it.
    pub hash: String,
}

impl Stage {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

pub struct StageWriter {
    dir: PathBuf,
    manifest: StageManifest,
}

impl StageWriter {
    pub fn new(dir: &Path, stage: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: StageManifest {
                stage: stage.into(),
                seed,
                inputs: BTreeMap::new(),
                files: Vec::new(),
                details: Value::Null,
            },
        })
    }

    pub fn input(&mut self, name: &str, hash: &str) {
        self.manifest.inputs.insert(name.into(), hash.into());
    }

    pub fn details(&mut self, details: Value) {
        self.manifest.details = details;
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.files.push(FileEntry {
            name: name.into(),
            sha256: sha256_hex(&[bytes]),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn finish(self) -> Result<String> {
        let path = self.dir.join(MANIFEST_FILE);
        write_json(&path, &self.manifest)?;
        file_hash(&path)
    }
}

/// Load and verify an artifact directory produced by `stage`.
pub fn open_stage(dir: &Path, stage: &str) -> Result<Stage> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Usage(format!(
            "{} is not an artifact directory (no {MANIFEST_FILE})",
            dir.display()
        ))
        .into());
    }
    let manifest: StageManifest = read_json(&path)?;
    if manifest.stage != stage {
        return Err(Usage(format!(
            "{} holds {} output, expected {stage}",
            dir.display(),
            manifest.stage
        ))
        .into());
    }
    for f in &manifest.files {
        let found = file_hash(&dir.join(&f.name))?;
        if found != f.sha256 {
            return Err(Error::HashMismatch {
                artifact: dir.join(&f.name).display().to_string(),
                expected: f.sha256.clone(),
                found,
            }
            .into());
        }
    }
    Ok(Stage {
        dir: dir.to_path_buf(),
        hash: file_hash(&path)?,
        manifest,
    })
}

/// `graph.json` in a dataset directory: the base graph tied to its dataset.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphArtifact {
    pub seed: u64,
    pub dataset_hash: String,
    pub graph_hash: String,
    pub graph: RegionGraph,
}

pub struct LoadedDataset {
    pub dataset: Dataset,
    pub manifest: DatasetManifest,
    pub graph: GraphArtifact,
}

/// Load a dataset directory written by `build`, checking every hash.
pub fn open_dataset(dir: &Path) -> Result<LoadedDataset> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Usage(format!("{} is not a dataset directory", dir.display())).into());
    }
    let (dataset, manifest) = Dataset::load(dir)?;
    let graph: GraphArtifact = read_json(&dir.join(GRAPH_FILE))?;
    if graph.dataset_hash != manifest.content_hash {
        return Err(Error::HashMismatch {
            artifact: dir.join(GRAPH_FILE).display().to_string(),
            expected: manifest.content_hash.clone(),
            found: graph.dataset_hash,
        }
        .into());
    }
    let found = graph.graph.content_hash()?;
    if found != graph.graph_hash {
        return Err(Error::HashMismatch {
            artifact: dir.join(GRAPH_FILE).display().to_string(),
            expected: graph.graph_hash,
            found,
        }
        .into());
    }
    Ok(LoadedDataset {
        dataset,
        manifest,
        graph,
    })
}

pub fn set_file_name(set_id: &str) -> String {
    format!("set_{set_id}.json")
}

pub struct LoadedSets {
    pub stage: Stage,
    pub sets: Vec<GeoclassSet>,
}

/// Load a `gen-sets` directory, in the order the sets were generated.
pub fn open_sets(dir: &Path) -> Result<LoadedSets> {
    let stage = open_stage(dir, "gen-sets")?;
    let sets = stage
        .manifest
        .files
        .iter()
        .filter(|f| f.name.starts_with("set_"))
        .map(|f| read_json::<GeoclassSet>(&stage.path(&f.name)))
        .collect::<Result<Vec<_>>>()?;
    if sets.is_empty() {
        return Err(Usage(format!("{} contains no geoclass sets", dir.display())).into());
    }
    Ok(LoadedSets { stage, sets })
}

/// Require that `stage` consumed the given upstream artifact.
pub fn require_input(stage: &Stage, name: &str, hash: &str) -> Result<()> {
    match stage.manifest.inputs.get(name) {
        Some(h) if h == hash => Ok(()),
        Some(h) => Err(Error::HashMismatch {
            artifact: format!("{} input {name}", stage.dir.display()),
            expected: hash.into(),
            found: h.clone(),
        }
        .into()),
        None => Err(Usage(format!(
            "{} does not record input {name}",
            stage.dir.display()
        ))
        .into()),
    }
}
