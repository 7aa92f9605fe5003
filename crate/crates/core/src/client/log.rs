//! Durable run directory: `run.json` (config + digest) and
//! `transcripts.jsonl` (one terminal transcript per line).

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::ClientError;
use crate::conditioner::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptStatus {
    Ok,
    Failed,
}

/// Persisted record of one model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub item_id: String,
    pub condition: Condition,
    pub request_digest: String,
    pub user_text_sent: Option<String>,
    pub image_hash: String,
    /// Assistant text on success; the failure reason otherwise.
    pub raw_response: String,
    /// Wall time of the final attempt.
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub status: TranscriptStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub config: RunConfig,
}

pub const MANIFEST_FILE: &str = "run.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";

pub fn manifest_path(run_dir: &Path) -> PathBuf {
    run_dir.join(MANIFEST_FILE)
}

pub fn transcripts_path(run_dir: &Path) -> PathBuf {
    run_dir.join(TRANSCRIPTS_FILE)
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest, ClientError> {
    let p = manifest_path(run_dir);
    let text = std::fs::read_to_string(&p).map_err(|e| ClientError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| ClientError::MalformedLog {
        line: e.line(),
        reason: format!("{}: {e}", p.display()),
    })
}

pub(crate) fn write_manifest(run_dir: &Path, cfg: &RunConfig) -> Result<(), ClientError> {
    let p = manifest_path(run_dir);
    let m = RunManifest {
        config_digest: cfg.digest(),
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(&p, text).map_err(|e| ClientError::io(&p, e))
}

/// Read all transcripts. A final line without a trailing newline that fails
/// to parse is a torn write from an interrupted run; it is dropped and the
/// file truncated to the last complete line. Any other malformed line is an
/// error. Duplicate `(item_id, condition)` keys keep the first occurrence.
pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, ClientError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(|e| ClientError::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| ClientError::io(path, e))?;

    let complete_len = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    let tail = &bytes[complete_len..];
    if !tail.is_empty() && serde_json::from_slice::<Transcript>(tail).is_err() {
        tracing::warn!(path = %path.display(), bytes = tail.len(), "dropping torn final transcript line");
        file.set_len(complete_len as u64).map_err(|e| ClientError::io(path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| ClientError::io(path, e))?;
        bytes.truncate(complete_len);
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
        let line = line.map_err(|e| ClientError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line).map_err(|e| ClientError::MalformedLog {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if seen.insert((t.item_id.clone(), t.condition)) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Append-only transcript sink. Each record is written and flushed as one
/// line.
pub(crate) struct TranscriptWriter {
    path: PathBuf,
    file: File,
}

impl TranscriptWriter {
    pub fn open(path: &Path) -> Result<Self, ClientError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ClientError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn append(&mut self, t: &Transcript) -> Result<(), ClientError> {
        let mut line = serde_json::to_vec(t).expect("transcript serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| ClientError::io(&self.path, e))
    }
}
