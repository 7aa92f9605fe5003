//! Evaluation campaigns against an OpenAI-compatible chat-completions
//! endpoint: one call per (item, condition), persisted as JSONL transcripts.

mod config;
mod log;
mod request;
mod runner;

pub use config::{InstructionMode, RetryPolicy, RunConfig, ANSWER_IN_IMAGE_PROMPT};
pub use log::{
    manifest_path, read_manifest, read_transcripts, transcripts_path, RunManifest, Transcript,
    TranscriptStatus, MANIFEST_FILE, TRANSCRIPTS_FILE,
};
pub use request::{build_request, parse_response_text, ChatMessage, ChatRequest, ContentPart, ImageUrl, MessageContent};
pub use runner::{execute_run, resume_run, run_or_resume, RunLog};

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("configuration conflict: {0}")]
    ConfigConflict(String),
    #[error("run was started with config {expected} but this config digests to {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("endpoint {url} unreachable: {reason}")]
    EndpointUnreachable { url: String, reason: String },
    #[error("endpoint rejected credentials (HTTP {status})")]
    AuthRejected { status: u16 },
    #[error("{0} already contains a run; resume it instead")]
    RunExists(PathBuf),
    #[error("malformed transcript log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("render failed: {0}")]
    Render(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ClientError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ClientError::Io { path: path.to_path_buf(), source }
    }

    /// True for failures caused by the remote endpoint rather than local data.
    pub fn is_endpoint_error(&self) -> bool {
        matches!(self, ClientError::EndpointUnreachable { .. } | ClientError::AuthRejected { .. })
    }
}
