//! File-backed artifact store with a content-hash manifest.
//!
//! Every artifact is written to a temporary sibling and renamed into place;
//! the manifest is rewritten last. The manifest's generation counter detects
//! a concurrent writer.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST: &str = "manifest.json";

pub const CORPUS: &str = "corpus.jsonl";
pub const CORPUS_FILTERED: &str = "corpus_filtered.jsonl";
pub const VOCAB_TOKENS: &str = "vocab_tokens.json";
pub const VOCAB_PATHS: &str = "vocab_paths.json";
pub const FREQ: &str = "freq.jsonl";
pub const VECTORS: &str = "vectors.jsonl";
pub const OVERLAYS: &str = "overlays.jsonl";
pub const AGGREGATES: &str = "aggregates.jsonl";
pub const LABELS: &str = "labels.jsonl";
pub const VOTES: &str = "votes.jsonl";
pub const INDEX_META: &str = "index_meta.jsonl";
pub const SOURCES: &str = "sources.jsonl";
pub const SUBMISSIONS: &str = "submissions.jsonl";
pub const PIPELINE: &str = "pipeline.json";
pub const EMBEDDING_MODEL: &str = "models/embedding.bin";
pub const CLASSIFIER_MODEL: &str = "models/classifier.bin";
pub const BUG_COUNT_MODEL: &str = "models/bugcount.bin";

/// Artifact name of a persisted scan report.
pub fn report_name(id: &str) -> String {
    format!("reports/{id}.json")
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("hash mismatch: {}", .0.join(", "))]
    HashMismatch(Vec<String>),
    #[error("artifact {0} is not in the store")]
    MissingArtifact(String),
    #[error("manifest changed underneath this writer (expected generation {expected}, found {found})")]
    ManifestConflict { expected: u64, found: u64 },
    #[error("invalid artifact name {0:?}")]
    InvalidName(String),
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub generation: u64,
    #[serde(default)]
    pub model_version: String,
    #[serde(default)]
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a temporary sibling of `path`, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(
        ".{file_name}.tmp-{}-{}",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(StoreError::io(path, e));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Creates the root and an empty generation-0 manifest unless one exists.
    pub fn init(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self { root: root.into() };
        fs::create_dir_all(&store.root).map_err(|e| StoreError::io(&store.root, e))?;
        if !store.manifest_path().exists() {
            store.write_manifest(&Manifest::default())?;
        }
        Ok(store)
    }

    /// Opens an existing store.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self { root: root.into() };
        if !store.manifest_path().is_file() {
            return Err(StoreError::MissingManifest(store.root));
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn path_of(&self, name: &str) -> Result<PathBuf, StoreError> {
        let valid = !name.is_empty()
            && name != MANIFEST
            && !name.starts_with('/')
            && name.split('/').all(|part| !part.is_empty() && part != "." && part != "..");
        if !valid {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        Ok(self.root.join(name))
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.manifest_path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::MissingManifest(self.root.clone())),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::BadManifest(e.to_string()))
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<(), StoreError> {
        let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        bytes.push(b'\n');
        atomic_write(&self.manifest_path(), &bytes)
    }

    /// Loads the manifest and checks every listed artifact against its hash.
    pub fn validate(&self) -> Result<Manifest, StoreError> {
        let manifest = self.manifest()?;
        let mut bad = Vec::new();
        for (name, entry) in &manifest.artifacts {
            match fs::read(self.path_of(name)?) {
                Ok(bytes) if sha256_hex(&bytes) == entry.sha256 && bytes.len() as u64 == entry.bytes => {}
                _ => bad.push(name.clone()),
            }
        }
        if bad.is_empty() {
            Ok(manifest)
        } else {
            Err(StoreError::HashMismatch(bad))
        }
    }

    pub fn contains(&self, name: &str) -> Result<bool, StoreError> {
        Ok(self.manifest()?.artifacts.contains_key(name))
    }

    /// Reads an artifact, verifying its recorded hash.
    pub fn load(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let manifest = self.manifest()?;
        let entry = manifest.artifacts.get(name).ok_or_else(|| StoreError::MissingArtifact(name.to_string()))?;
        let path = self.path_of(name)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::HashMismatch(vec![name.to_string()])),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(StoreError::HashMismatch(vec![name.to_string()]));
        }
        Ok(bytes)
    }

    /// Like [`Store::load`] but an absent artifact yields `None`.
    pub fn load_optional(&self, name: &str) -> Result<Option<Vec<u8>>, StoreError> {
        match self.load(name) {
            Ok(b) => Ok(Some(b)),
            Err(StoreError::MissingArtifact(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, name: &str, payload: &[u8]) -> Result<String, StoreError> {
        let generation = self.manifest()?.generation;
        let hashes = self.commit(generation, &[(name, payload)], None)?;
        Ok(hashes.into_iter().next().expect("one artifact"))
    }

    /// Writes several artifacts with one manifest update.
    pub fn save_all(&self, items: &[(&str, &[u8])]) -> Result<Vec<String>, StoreError> {
        let generation = self.manifest()?.generation;
        self.commit(generation, items, None)
    }

    pub fn set_model_version(&self, version: &str) -> Result<(), StoreError> {
        let generation = self.manifest()?.generation;
        self.commit(generation, &[], Some(version)).map(|_| ())
    }

    /// Writes `items` and a new manifest, provided the manifest is still at
    /// `expected_generation`.
    pub fn commit(
        &self,
        expected_generation: u64,
        items: &[(&str, &[u8])],
        model_version: Option<&str>,
    ) -> Result<Vec<String>, StoreError> {
        let current = self.manifest()?;
        if current.generation != expected_generation {
            return Err(StoreError::ManifestConflict { expected: expected_generation, found: current.generation });
        }
        let mut next = current;
        let mut hashes = Vec::with_capacity(items.len());
        for (name, payload) in items {
            let path = self.path_of(name)?;
            atomic_write(&path, payload)?;
            let sha256 = sha256_hex(payload);
            next.artifacts.insert(name.to_string(), ArtifactEntry { sha256: sha256.clone(), bytes: payload.len() as u64 });
            hashes.push(sha256);
        }
        if let Some(v) = model_version {
            next.model_version = v.to_string();
        }
        // last-moment check before the manifest swap
        let found = self.manifest()?.generation;
        if found != expected_generation {
            return Err(StoreError::ManifestConflict { expected: expected_generation, found });
        }
        next.generation = expected_generation + 1;
        self.write_manifest(&next)?;
        Ok(hashes)
    }

    /// Appends one line to a line-oriented artifact, creating it if needed.
    pub fn append(&self, name: &str, line: &[u8]) -> Result<String, StoreError> {
        let mut bytes = self.load_optional(name)?.unwrap_or_default();
        bytes.extend_from_slice(line);
        self.save(name, &bytes)
    }

    /// Drops an artifact from the manifest and deletes its file.
    pub fn remove(&self, name: &str) -> Result<(), StoreError> {
        let mut manifest = self.manifest()?;
        if manifest.artifacts.remove(name).is_none() {
            return Ok(());
        }
        let expected = manifest.generation;
        manifest.generation += 1;
        if self.manifest()?.generation != expected {
            return Err(StoreError::ManifestConflict { expected, found: self.manifest()?.generation });
        }
        self.write_manifest(&manifest)?;
        let path = self.path_of(name)?;
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }
}
