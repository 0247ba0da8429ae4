//! Labeled recording collections and their on-disk layout: one recording
//! file per (user, session) plus a `manifest.json` listing them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::signal::{GazeRecording, SignalError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("recording {path}: {source}")]
    Recording {
        path: PathBuf,
        #[source]
        source: SignalError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording<T: Scalar> {
    pub user: String,
    pub session: u32,
    pub recording: GazeRecording<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus<T: Scalar> {
    pub entries: Vec<LabeledRecording<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user: String,
    pub session: u32,
    /// Relative to the manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl<T: Scalar> Corpus<T> {
    /// Distinct user labels, sorted.
    pub fn users(&self) -> Vec<String> {
        let mut users: Vec<String> = self.entries.iter().map(|e| e.user.clone()).collect();
        users.sort();
        users.dedup();
        users
    }

    pub fn get(&self, user: &str, session: u32) -> Option<&LabeledRecording<T>> {
        self.entries
            .iter()
            .find(|e| e.user == user && e.session == session)
    }

    /// Writes every recording plus `manifest.json` into `dir`. Returns the
    /// manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut manifest = Manifest::default();
        for e in &self.entries {
            let name = format!("{}_s{}.json", e.user, e.session);
            let path = dir.join(&name);
            fs::write(&path, e.recording.to_json()).map_err(io_err(&path))?;
            manifest.entries.push(ManifestEntry {
                user: e.user.clone(),
                session: e.session,
                path: name,
            });
        }
        let mpath = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&mpath, text).map_err(io_err(&mpath))?;
        Ok(mpath)
    }

    pub fn load_manifest(manifest_path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            let path = base.join(&m.path);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let recording = GazeRecording::from_json(&text).map_err(|source| CorpusError::Recording {
                path: path.clone(),
                source,
            })?;
            entries.push(LabeledRecording {
                user: m.user,
                session: m.session,
                recording,
            });
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = GazeRecording::<f64>::from_positions(100.0, &[0.0, 1.0, 2.5], &[0.0, -1.0, 0.25]).unwrap();
        let corpus = Corpus {
            entries: vec![
                LabeledRecording { user: "A".into(), session: 1, recording: rec.clone() },
                LabeledRecording { user: "A".into(), session: 2, recording: rec.clone() },
                LabeledRecording { user: "B".into(), session: 1, recording: rec },
            ],
        };
        let manifest = corpus.write_to_dir(dir.path()).unwrap();
        let back = Corpus::<f64>::load_manifest(&manifest).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.users(), ["A", "B"]);
        assert!(back.get("A", 2).is_some());
        assert!(back.get("B", 2).is_none());
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Corpus::<f64>::load_manifest(&dir.path().join("nope.json")),
            Err(CorpusError::Io { .. })
        ));
    }
}
