//! On-disk run persistence.
//!
//! ```text
//! <root>/<run_id>/manifest.json
//! <root>/<run_id>/transcripts/NNN.json
//! <root>/<run_id>/results.json
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Timestamps and the run id live only in the manifest, so `results.json`
//! is a pure function of the run's inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest::Digest;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.json";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Relative,
    Absolute,
    Drift,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Relative => "relative",
            RunKind::Absolute => "absolute",
            RunKind::Drift => "drift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub kind: RunKind,
    pub config_digest: String,
    pub template_versions: BTreeMap<String, u32>,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run {0} not found")]
    NotFound(String),
    #[error("{}: {message}", .path.display())]
    Format { path: PathBuf, message: String },
    #[error("cannot serialize payload: {0}")]
    Serialize(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Digest of the effective configuration. Callers must leave run ids and
/// timestamps out of `config`.
pub fn config_digest<T: Serialize + ?Sized>(config: &T) -> String {
    Digest::of_json(config).as_str().to_string()
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp-{}", uuid::Uuid::new_v4().simple()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, StoreError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| StoreError::Serialize(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize + ?Sized> {
    schema_version: u32,
    kind: RunKind,
    result: &'a T,
}

#[derive(Serialize)]
struct TranscriptEnvelope<'a, T: Serialize + ?Sized> {
    schema_version: u32,
    index: usize,
    transcript: &'a T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedEnvelope {
    schema_version: u32,
    kind: RunKind,
    result: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedTranscriptEnvelope {
    schema_version: u32,
    index: usize,
    transcript: serde_json::Value,
}

/// A directory of runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Starts a new run with a fresh id. Nothing is visible on disk until
    /// the first payload is written.
    pub fn create(
        &self,
        kind: RunKind,
        config_digest: String,
        template_versions: BTreeMap<String, u32>,
    ) -> RunWriter {
        let run_id = uuid::Uuid::new_v4().to_string();
        RunWriter {
            dir: self.run_dir(&run_id),
            manifest: RunManifest {
                schema_version: SCHEMA_VERSION,
                run_id,
                kind,
                config_digest,
                template_versions,
                started_at: Utc::now(),
                finished_at: None,
                status: RunStatus::Partial,
                error: None,
            },
            manifest_written: false,
        }
    }

    /// Ids of every run directory that has a manifest, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join(MANIFEST_FILE).is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load(&self, run_id: &str) -> Result<StoredRun, StoreError> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        let dir = self.run_dir(run_id);
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        let manifest: RunManifest = read_json(&manifest_path)?;
        check_schema(&manifest_path, manifest.schema_version)?;
        if manifest.run_id != run_id {
            return Err(StoreError::Format {
                path: manifest_path,
                message: format!("manifest names run {}", manifest.run_id),
            });
        }

        let mut transcripts = Vec::new();
        let tdir = dir.join(TRANSCRIPTS_DIR);
        if tdir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&tdir)
                .map_err(io_err(&tdir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_payload_file(p))
                .collect();
            files.sort();
            for path in files {
                let env: OwnedTranscriptEnvelope = read_json(&path)?;
                check_schema(&path, env.schema_version)?;
                if env.index != transcripts.len() {
                    return Err(StoreError::Format {
                        path,
                        message: format!(
                            "expected transcript {}, found {}",
                            transcripts.len(),
                            env.index
                        ),
                    });
                }
                transcripts.push(env.transcript);
            }
        }

        let results_path = dir.join(RESULTS_FILE);
        let results = if results_path.is_file() {
            let env: OwnedEnvelope = read_json(&results_path)?;
            check_schema(&results_path, env.schema_version)?;
            if env.kind != manifest.kind {
                return Err(StoreError::Format {
                    path: results_path,
                    message: format!("results are for a {} run", env.kind.as_str()),
                });
            }
            Some(env.result)
        } else {
            None
        };

        Ok(StoredRun {
            dir,
            manifest,
            transcripts,
            results,
        })
    }
}

fn is_payload_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
        && !path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'))
}

fn check_schema(path: &Path, version: u32) -> Result<(), StoreError> {
    if version != SCHEMA_VERSION {
        return Err(StoreError::Format {
            path: path.to_path_buf(),
            message: format!("unsupported schema_version {version}"),
        });
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes one run's files. A single run's writes are sequential.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    manifest: RunManifest,
    manifest_written: bool,
}

impl RunWriter {
    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn after_payload(&mut self) -> Result<(), StoreError> {
        if !self.manifest_written {
            self.write_manifest()?;
            self.manifest_written = true;
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        write_atomic(
            &self.dir.join(MANIFEST_FILE),
            &to_json_bytes(&self.manifest)?,
        )
    }

    /// Writes `transcripts/NNN.json`. Indices must be written in order
    /// starting at 0.
    pub fn write_transcript<T: Serialize + ?Sized>(
        &mut self,
        index: usize,
        transcript: &T,
    ) -> Result<PathBuf, StoreError> {
        let path = self
            .dir
            .join(TRANSCRIPTS_DIR)
            .join(format!("{index:03}.json"));
        let env = TranscriptEnvelope {
            schema_version: SCHEMA_VERSION,
            index,
            transcript,
        };
        write_atomic(&path, &to_json_bytes(&env)?)?;
        self.after_payload()?;
        Ok(path)
    }

    pub fn write_results<T: Serialize + ?Sized>(
        &mut self,
        result: &T,
    ) -> Result<PathBuf, StoreError> {
        let path = self.dir.join(RESULTS_FILE);
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            kind: self.manifest.kind,
            result,
        };
        write_atomic(&path, &to_json_bytes(&env)?)?;
        self.after_payload()?;
        Ok(path)
    }

    /// Records the final status. Always writes a manifest, even if no
    /// payload was persisted.
    pub fn finish(
        mut self,
        status: RunStatus,
        error: Option<String>,
    ) -> Result<RunManifest, StoreError> {
        self.manifest.status = status;
        self.manifest.error = error;
        self.manifest.finished_at = Some(Utc::now());
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

/// A loaded run. Payloads stay as JSON until decoded with
/// [`StoredRun::results_as`] or [`StoredRun::transcripts_as`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub transcripts: Vec<serde_json::Value>,
    pub results: Option<serde_json::Value>,
}

impl StoredRun {
    pub fn results_as<T: DeserializeOwned>(&self) -> Result<Option<T>, StoreError> {
        self.results
            .clone()
            .map(|v| {
                serde_json::from_value(v).map_err(|e| StoreError::Format {
                    path: self.dir.join(RESULTS_FILE),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn transcripts_as<T: DeserializeOwned>(&self) -> Result<Vec<T>, StoreError> {
        self.transcripts
            .iter()
            .map(|v| {
                serde_json::from_value(v.clone()).map_err(|e| StoreError::Format {
                    path: self.dir.join(TRANSCRIPTS_DIR),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
