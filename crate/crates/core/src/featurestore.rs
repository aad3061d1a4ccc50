//! Persistent per-file feature table with incremental updates.
//!
//! The store is a JSON Lines file: a header line (format version, weight
//! config and its digest, revision counter) followed by one [`FeatureRecord`]
//! per line, sorted by path. Updates re-analyze only files whose content hash
//! changed and are committed with an atomic rename under a single-writer lock
//! file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codehealth::{
    analyze_bytes, composite_score, dialect_for_extension, Dialect, HealthScore, SubFactorVector,
    WeightConfig,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const STORE_FORMAT: &str = "triage-features";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub path: String,
    /// Hex SHA-256 of the file bytes.
    pub content_hash: String,
    pub sub_factors: SubFactorVector,
    pub score: HealthScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    /// Store revision at which the record was last (re)analyzed.
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    version: u32,
    weights_digest: String,
    weights: WeightConfig,
    revision: u64,
}

/// A file handed to [`FeatureStore::update`].
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: String,
    pub content: Vec<u8>,
    /// Overrides the extension-based dialect lookup.
    pub dialect: Option<Dialect>,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, content: impl Into<Vec<u8>>) -> Self {
        Self {
            path: path.into(),
            content: content.into(),
            dialect: None,
        }
    }

    fn resolved_dialect(&self) -> Dialect {
        self.dialect
            .or_else(|| {
                Path::new(&self.path)
                    .extension()
                    .and_then(|e| e.to_str())
                    .and_then(dialect_for_extension)
            })
            .unwrap_or(Dialect::Brace)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub analyzed: usize,
    pub cache_hits: usize,
    /// Records whose score was recomputed because the weight config changed.
    pub rescored: usize,
    pub errors: Vec<FileError>,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub message: String,
}

/// Result of looking up one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Lookup {
    Found(FeatureRecord),
    Missing { path: String },
}

impl Lookup {
    pub fn record(&self) -> Option<&FeatureRecord> {
        match self {
            Lookup::Found(r) => Some(r),
            Lookup::Missing { .. } => None,
        }
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    weights: WeightConfig,
    revision: u64,
    records: BTreeMap<String, FeatureRecord>,
}

impl FeatureStore {
    pub fn new(weights: WeightConfig) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights,
            revision: 0,
            records: BTreeMap::new(),
        })
    }

    pub fn weights(&self) -> &WeightConfig {
        &self.weights
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&FeatureRecord> {
        self.records.get(path)
    }

    /// Records in path order.
    pub fn records(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.records.values()
    }

    /// Insert a pre-built record (synthetic corpora); its score must match
    /// the store's weights.
    pub fn insert_record(&mut self, mut record: FeatureRecord) -> Result<()> {
        let expected = composite_score(&record.sub_factors, &self.weights)?;
        if expected != record.score {
            return Err(Error::Domain(format!(
                "record {} has score {} but its sub-factors give {}",
                record.path, record.score.value, expected.value
            )));
        }
        record.updated_at = self.revision;
        self.records.insert(record.path.clone(), record);
        Ok(())
    }

    /// Re-analyze changed files and replace their records.
    ///
    /// Unchanged content (same hash) is a cache hit. Files absent from
    /// `files` are kept; use [`FeatureStore::remove`] to delete. Unreadable
    /// or non-text files are reported per file and do not stop the update.
    pub fn update(
        &mut self,
        files: &[SourceFile],
        weights: &WeightConfig,
    ) -> Result<UpdateSummary> {
        weights.validate()?;
        self.revision += 1;
        let revision = self.revision;
        let mut summary = UpdateSummary {
            revision,
            ..Default::default()
        };

        if weights.digest() != self.weights.digest() {
            self.weights = *weights;
            for record in self.records.values_mut() {
                record.score = composite_score(&record.sub_factors, weights)?;
                summary.rescored += 1;
            }
        }

        // Last occurrence of a path wins.
        let mut latest: BTreeMap<&str, &SourceFile> = BTreeMap::new();
        for f in files {
            latest.insert(&f.path, f);
        }

        let hashed: Vec<(&SourceFile, String)> = latest
            .values()
            .map(|f| (*f, content_hash(&f.content)))
            .collect();
        let (hits, stale): (Vec<_>, Vec<_>) = hashed.into_iter().partition(|(f, h)| {
            self.records
                .get(&f.path)
                .is_some_and(|r| &r.content_hash == h)
        });
        summary.cache_hits = hits.len();

        let analyses: Vec<(&SourceFile, String, Result<SubFactorVector>)> = stale
            .into_par_iter()
            .map(|(f, h)| {
                let v = analyze_bytes(&f.content, f.resolved_dialect());
                (f, h, v)
            })
            .collect();

        for (file, hash, analysis) in analyses {
            match analysis {
                Ok(sub_factors) => {
                    let score = composite_score(&sub_factors, weights)?;
                    let coverage = self.records.get(&file.path).and_then(|r| r.coverage);
                    self.records.insert(
                        file.path.clone(),
                        FeatureRecord {
                            path: file.path.clone(),
                            content_hash: hash,
                            sub_factors,
                            score,
                            coverage,
                            updated_at: revision,
                        },
                    );
                    summary.analyzed += 1;
                }
                Err(e) => summary.errors.push(FileError {
                    path: file.path.clone(),
                    message: e.to_string(),
                }),
            }
        }
        Ok(summary)
    }

    /// Look up paths in order; unknown paths come back as [`Lookup::Missing`].
    pub fn lookup<S: AsRef<str>>(&self, paths: &[S]) -> Vec<Lookup> {
        paths
            .iter()
            .map(|p| match self.records.get(p.as_ref()) {
                Some(r) => Lookup::Found(r.clone()),
                None => Lookup::Missing {
                    path: p.as_ref().to_string(),
                },
            })
            .collect()
    }

    pub fn remove<S: AsRef<str>>(&mut self, paths: &[S]) -> usize {
        paths
            .iter()
            .filter(|p| self.records.remove(p.as_ref()).is_some())
            .count()
    }

    /// Attach coverage fractions; returns paths that are not in the store.
    pub fn apply_coverage(&mut self, coverage: &BTreeMap<String, f64>) -> Result<Vec<String>> {
        let mut unknown = Vec::new();
        for (path, &frac) in coverage {
            if !(0.0..=1.0).contains(&frac) {
                return Err(Error::Domain(format!(
                    "coverage for {path} must be in [0, 1], got {frac}"
                )));
            }
            match self.records.get_mut(path) {
                Some(r) => r.coverage = Some(frac),
                None => unknown.push(path.clone()),
            }
        }
        Ok(unknown)
    }

    pub fn to_jsonl(&self) -> String {
        let header = StoreHeader {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            weights_digest: self.weights.digest(),
            weights: self.weights,
            revision: self.revision,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let integrity = |line: usize, message: String| Error::Integrity {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, first) = lines
            .next()
            .ok_or_else(|| integrity(1, "missing header line".into()))?;
        let header: StoreHeader =
            serde_json::from_str(first).map_err(|e| integrity(n, format!("bad header: {e}")))?;
        if header.format != STORE_FORMAT || header.version != STORE_VERSION {
            return Err(integrity(
                n,
                format!(
                    "unsupported store format {} v{}",
                    header.format, header.version
                ),
            ));
        }
        header
            .weights
            .validate()
            .map_err(|e| integrity(n, e.to_string()))?;
        if header.weights.digest() != header.weights_digest {
            return Err(integrity(n, "weights digest does not match weights".into()));
        }

        let mut records = BTreeMap::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let record: FeatureRecord =
                serde_json::from_str(line).map_err(|e| integrity(n, e.to_string()))?;
            let expected = composite_score(&record.sub_factors, &header.weights)
                .map_err(|e| integrity(n, e.to_string()))?;
            if expected != record.score {
                return Err(integrity(
                    n,
                    format!(
                        "score of {} is inconsistent with its sub-factors",
                        record.path
                    ),
                ));
            }
            if records.insert(record.path.clone(), record).is_some() {
                return Err(integrity(n, "duplicate path".into()));
            }
        }
        Ok(Self {
            weights: header.weights,
            revision: header.revision,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Load `path`, or start an empty store if it does not exist yet.
    pub fn load_or_new(path: &Path, weights: WeightConfig) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Self::new(weights)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Exclusive writer lock for a store file, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    lock_path: PathBuf,
}

impl StoreLock {
    pub fn lock_path_for(store: &Path) -> PathBuf {
        let mut name = store.as_os_str().to_owned();
        name.push(".lock");
        PathBuf::from(name)
    }

    pub fn acquire(store: &Path) -> Result<Self> {
        let lock_path = Self::lock_path_for(store);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { lock_path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Lock(lock_path)),
            Err(e) => Err(Error::io(lock_path, e)),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock_path);
    }
}

/// Lock, load (or create), update and atomically commit the store at `path`.
pub fn update_store(
    path: &Path,
    files: &[SourceFile],
    weights: &WeightConfig,
) -> Result<UpdateSummary> {
    let _lock = StoreLock::acquire(path)?;
    let mut store = FeatureStore::load_or_new(path, *weights)?;
    let summary = store.update(files, weights)?;
    store.save(path)?;
    Ok(summary)
}

/// Parse a coverage report: a JSON object mapping path to covered fraction.
pub fn read_coverage(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text)?;
    Ok(map)
}
