//! Append-only JSON Lines provenance log of an extension run.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::diffusion::{ConstraintType, GenerationParams};
use crate::prompt::PromptRecord;

pub const MANIFEST_SCHEMA: &str = "didex-manifest/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed(String),
}

/// One generation: `(source image, prompt, constraint) -> output image`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Position of the source image in the source dataset.
    pub index: u64,
    pub variant: u32,
    pub source_id: String,
    pub output_id: String,
    pub prompt: PromptRecord,
    pub constraint_kind: ConstraintType,
    pub backend_id: String,
    pub generation_seed: u64,
    pub params: GenerationParams,
    /// Relative to the dataset root.
    pub output_path: PathBuf,
    pub output_checksum: Option<String>,
    pub status: RecordStatus,
    /// Milliseconds since the Unix epoch; excluded from canonical comparison.
    pub timestamp_ms: u64,
}

impl ManifestRecord {
    pub fn key(&self) -> (u64, u32) {
        (self.index, self.variant)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }

    /// JSON without the timestamp.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        v.as_object_mut().expect("record is an object").remove("timestamp_ms");
        v.to_string()
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Appends records, syncing each line to disk before returning.
#[derive(Debug)]
pub struct ManifestWriter {
    file: File,
    path: PathBuf,
}

impl ManifestWriter {
    /// Opens `path` for appending, writing the schema header if the file is new.
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let io = DatasetError::io(path);
        let fresh = !path.exists() || std::fs::metadata(path).map_err(DatasetError::io(path))?.len() == 0;
        if !fresh {
            read_manifest(path)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if fresh {
            let header = serde_json::to_string(&Header { schema: MANIFEST_SCHEMA.into() }).expect("header");
            writeln!(file, "{header}").and_then(|_| file.sync_data()).map_err(DatasetError::io(path))?;
        } else {
            terminate_partial_line(path, &mut file)?;
        }
        Ok(ManifestWriter { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, record: &ManifestRecord) -> Result<(), DatasetError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.sync_data())
            .map_err(DatasetError::io(&self.path))
    }
}

/// A crash can leave a partial last line; drop it so appends start clean.
fn terminate_partial_line(path: &Path, file: &mut File) -> Result<(), DatasetError> {
    let bytes = std::fs::read(path).map_err(DatasetError::io(path))?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        file.set_len(keep as u64).and_then(|_| file.sync_data()).map_err(DatasetError::io(path))?;
    }
    Ok(())
}

/// The current state of a manifest: the latest record per `(index, variant)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: BTreeMap<(u64, u32), ManifestRecord>,
}

impl Manifest {
    pub fn get(&self, index: u64, variant: u32) -> Option<&ManifestRecord> {
        self.records.get(&(index, variant))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.values()
    }

    pub fn ok_records(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.iter().filter(|r| r.is_ok())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One canonical JSON line per record in key order, timestamps removed.
    pub fn canonical(&self) -> String {
        self.iter().map(|r| r.canonical_json() + "\n").collect()
    }
}

/// Reads a manifest; later lines supersede earlier ones for the same key.
///
/// An unparsable final line without a newline is a torn write and is skipped.
pub fn read_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(DatasetError::io(path))?;
    let err = |line: usize, message: String| DatasetError::Manifest { path: path.to_path_buf(), line, message };
    let torn_tail = !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let Some(first) = lines.first() else {
        return Err(err(1, "empty manifest".into()));
    };
    match serde_json::from_str::<Header>(first) {
        Ok(h) if h.schema == MANIFEST_SCHEMA => {}
        Ok(h) => return Err(err(1, format!("unsupported schema `{}`", h.schema))),
        Err(e) => return Err(err(1, format!("bad header: {e}"))),
    }
    let mut manifest = Manifest::default();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestRecord>(line) {
            Ok(r) => {
                manifest.records.insert(r.key(), r);
            }
            Err(_) if torn_tail && i + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final line", path.display());
            }
            Err(e) => return Err(err(i + 1, e.to_string())),
        }
    }
    Ok(manifest)
}
