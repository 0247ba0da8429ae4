//! Enrollment database: user name to one or more templates, persisted as a
//! single JSON file that is replaced atomically on every mutation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{Embedding, ModelId};
use crate::scalar::Scalar;

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const MAX_NAME_CHARS: usize = 64;
/// Templates must have unit norm to within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("template from model {found} does not match store model {expected}")]
    ModelMismatch { expected: ModelId, found: ModelId },
    #[error("invalid enrollment: {0}")]
    Validation(String),
    #[error("no user named {0:?}")]
    NotFound(String),
    #[error("unsupported store format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed store file: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateRecord<T> {
    pub name: String,
    pub enrolled_at: Vec<DateTime<Utc>>,
    /// Oldest first.
    pub embeddings: Vec<Embedding<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSummary {
    pub name: String,
    pub embedding_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct StoreFile<T> {
    format_version: u32,
    model_id: Option<ModelId>,
    users: Vec<UserEntry<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct UserEntry<T> {
    name: String,
    enrolled_at: Vec<DateTime<Utc>>,
    embeddings: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore<T> {
    path: Option<PathBuf>,
    model_id: Option<ModelId>,
    records: BTreeMap<String, TemplateRecord<T>>,
}

pub fn validate_name(name: &str) -> Result<(), StoreError> {
    let n = name.chars().count();
    if n == 0 || n > MAX_NAME_CHARS {
        return Err(StoreError::Validation(format!(
            "name must be 1 to {MAX_NAME_CHARS} characters, got {n}"
        )));
    }
    if name.chars().any(char::is_control) {
        return Err(StoreError::Validation("name contains control characters".into()));
    }
    Ok(())
}

impl<T: Scalar> TemplateStore<T> {
    /// A store that is never written to disk.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            model_id: None,
            records: BTreeMap::new(),
        }
    }

    /// Loads `path` if it exists, otherwise starts empty; later mutations
    /// are written to `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if path.exists() {
            Self::load(&path)
        } else {
            Ok(Self {
                path: Some(path),
                ..Self::in_memory()
            })
        }
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut store = Self::from_json(&text)?;
        store.path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| StoreError::Format(e.to_string()))?;
        if v.format_version != STORE_FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(v.format_version));
        }
        let file: StoreFile<T> = serde_json::from_str(text).map_err(|e| StoreError::Format(e.to_string()))?;
        let mut store = Self {
            path: None,
            model_id: file.model_id,
            records: BTreeMap::new(),
        };
        for u in file.users {
            validate_name(&u.name)?;
            if u.enrolled_at.len() != u.embeddings.len() {
                return Err(StoreError::Format(format!("{}: timestamp and embedding counts differ", u.name)));
            }
            let model_id = store
                .model_id
                .clone()
                .ok_or_else(|| StoreError::Format("users present but no model_id".into()))?;
            let embeddings: Vec<Embedding<T>> = u
                .embeddings
                .into_iter()
                .map(|v| Embedding {
                    v,
                    model_id: model_id.clone(),
                })
                .collect();
            for e in &embeddings {
                store.check_embedding(e)?;
            }
            let rec = TemplateRecord {
                name: u.name.clone(),
                enrolled_at: u.enrolled_at,
                embeddings,
            };
            if store.records.insert(u.name.clone(), rec).is_some() {
                return Err(StoreError::Format(format!("duplicate user {:?}", u.name)));
            }
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile {
            format_version: STORE_FORMAT_VERSION,
            model_id: self.model_id.clone(),
            users: self
                .records
                .values()
                .map(|r| UserEntry {
                    name: r.name.clone(),
                    enrolled_at: r.enrolled_at.clone(),
                    embeddings: r.embeddings.iter().map(|e| e.v.clone()).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("store serializes")
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn model_id(&self) -> Option<&ModelId> {
        self.model_id.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn dim(&self) -> Option<usize> {
        self.records.values().flat_map(|r| r.embeddings.first()).map(|e| e.dim()).next()
    }

    fn check_embedding(&self, e: &Embedding<T>) -> Result<(), StoreError> {
        if let Some(expected) = &self.model_id {
            if *expected != e.model_id {
                return Err(StoreError::ModelMismatch {
                    expected: expected.clone(),
                    found: e.model_id.clone(),
                });
            }
        }
        if e.v.is_empty() || !e.v.iter().all(|x| x.is_finite()) {
            return Err(StoreError::Validation("embedding must be non-empty and finite".into()));
        }
        if !e.is_unit(UNIT_NORM_TOL) {
            return Err(StoreError::Validation(format!("embedding norm {} is not 1", e.norm())));
        }
        if let Some(d) = self.dim() {
            if d != e.dim() {
                return Err(StoreError::Validation(format!("embedding dim {} differs from store dim {d}", e.dim())));
            }
        }
        Ok(())
    }

    /// Appends `embedding` to `name`'s record, creating it if needed, and
    /// returns the record's new embedding count. An empty store adopts the
    /// embedding's model.
    pub fn enroll(&mut self, name: &str, embedding: Embedding<T>) -> Result<usize, StoreError> {
        self.enroll_at(name, embedding, Utc::now())
    }

    pub fn enroll_at(&mut self, name: &str, embedding: Embedding<T>, at: DateTime<Utc>) -> Result<usize, StoreError> {
        validate_name(name)?;
        self.check_embedding(&embedding)?;
        let mut next = self.clone();
        next.model_id.get_or_insert_with(|| embedding.model_id.clone());
        let rec = next.records.entry(name.to_string()).or_insert_with(|| TemplateRecord {
            name: name.to_string(),
            enrolled_at: Vec::new(),
            embeddings: Vec::new(),
        });
        rec.enrolled_at.push(at);
        rec.embeddings.push(embedding);
        let count = rec.embeddings.len();
        next.persist()?;
        *self = next;
        Ok(count)
    }

    pub fn lookup(&self, name: &str) -> Result<&TemplateRecord<T>, StoreError> {
        self.records.get(name).ok_or_else(|| StoreError::NotFound(name.to_string()))
    }

    /// Sorted by name.
    pub fn list_users(&self) -> Vec<UserSummary> {
        self.records
            .values()
            .map(|r| UserSummary {
                name: r.name.clone(),
                embedding_count: r.embeddings.len(),
            })
            .collect()
    }

    pub fn delete_user(&mut self, name: &str) -> Result<(), StoreError> {
        if !self.records.contains_key(name) {
            return Err(StoreError::NotFound(name.to_string()));
        }
        let mut next = self.clone();
        next.records.remove(name);
        next.persist()?;
        *self = next;
        Ok(())
    }

    /// Writes the whole store to its path via a sibling temp file and rename.
    /// No-op for in-memory stores.
    pub fn persist(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(self.to_json().as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }
}
