//! Campaign execution: bounded concurrency, retries, durable log, resume.

use futures::stream::{self, StreamExt};
use rand::Rng;
use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::config::RunConfig;
use super::log::{self, Transcript, TranscriptStatus, TranscriptWriter};
use super::request::{build_request, parse_response_text, ChatRequest};
use super::ClientError;
use crate::conditioner::Renderer;
use crate::corpus::EvalItem;

/// Outcome of a run or resume. `transcripts` holds every terminal record in
/// the log after the call, previously persisted ones included.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub ok: usize,
    pub failed: usize,
    /// Items already present in the log before this call.
    pub skipped: usize,
    /// HTTP attempts made in this call.
    pub requests_sent: usize,
    pub transcripts: Vec<Transcript>,
}

/// Per-item outcomes that abort the whole campaign.
enum Fatal {
    Unreachable(String),
    Auth(u16),
}

struct Campaign {
    cfg: RunConfig,
    renderer: Renderer,
    http: reqwest::Client,
    bearer: Option<String>,
}

impl Campaign {
    fn new(cfg: &RunConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        let renderer = Renderer::new(cfg.render.clone()).map_err(|e| ClientError::Render(e.to_string()))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let bearer = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|v| !v.is_empty());
        Ok(Self {
            cfg: cfg.clone(),
            renderer,
            http,
            bearer,
        })
    }

    fn prepare(&self, item: &EvalItem) -> Result<(String, ChatRequest), String> {
        let source = crate::conditioner::load_source(&item.image_path).map_err(|e| e.to_string())?;
        let question = item.question.as_deref().unwrap_or_default();
        let img = self
            .renderer
            .render_condition(&source, question, self.cfg.condition)
            .map_err(|e| e.to_string())?;
        let req = build_request(item, &img, &self.cfg).map_err(|e| e.to_string())?;
        Ok((img.content_hash, req))
    }

    async fn backoff(&self, attempt: u32) {
        let mut ms = self.cfg.retry.delay_ms(attempt) as f64;
        if self.cfg.retry.jitter {
            ms *= rand::thread_rng().gen_range(0.5..=1.0);
        }
        tokio::time::sleep(Duration::from_millis(ms as u64)).await;
    }

    /// Render, send with retries, and produce the terminal transcript plus
    /// the number of HTTP attempts made.
    async fn process(self: Arc<Self>, item: EvalItem) -> Result<(Transcript, usize), Fatal> {
        let this = Arc::clone(&self);
        let item = Arc::new(item);
        let for_render = Arc::clone(&item);
        let prepared = tokio::task::spawn_blocking(move || this.prepare(&for_render))
            .await
            .unwrap_or_else(|e| Err(format!("render task failed: {e}")));

        let (image_hash, req) = match prepared {
            Ok(p) => p,
            Err(reason) => {
                tracing::warn!(item = %item.item_id, %reason, "could not build request");
                let t = Transcript {
                    item_id: item.item_id.clone(),
                    condition: self.cfg.condition,
                    request_digest: String::new(),
                    user_text_sent: None,
                    image_hash: String::new(),
                    raw_response: reason,
                    latency_ms: 0,
                    attempt_count: 0,
                    status: TranscriptStatus::Failed,
                };
                return Ok((t, 0));
            }
        };

        let body = req.to_json_bytes();
        let record = |status, raw_response, latency_ms, attempt_count| Transcript {
            item_id: item.item_id.clone(),
            condition: self.cfg.condition,
            request_digest: req.digest(),
            user_text_sent: req.user_text(),
            image_hash: image_hash.clone(),
            raw_response,
            latency_ms,
            attempt_count,
            status,
        };

        let max = self.cfg.retry.max_attempts;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let mut rb = self
                .http
                .post(&self.cfg.endpoint_url)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone());
            if let Some(token) = &self.bearer {
                rb = rb.bearer_auth(token);
            }
            let outcome = match rb.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    Ok((status, resp.text().await))
                }
                Err(e) => Err(e),
            };
            let latency = started.elapsed().as_millis() as u64;
            let n = attempt as usize;

            match outcome {
                Ok((status, Ok(text))) if status.is_success() => {
                    let t = match parse_response_text(&text) {
                        Ok(answer) => record(TranscriptStatus::Ok, answer, latency, attempt),
                        Err(reason) => record(TranscriptStatus::Failed, reason, latency, attempt),
                    };
                    return Ok((t, n));
                }
                Ok((status, _)) if matches!(status.as_u16(), 401 | 403) => {
                    return Err(Fatal::Auth(status.as_u16()));
                }
                Ok((status, body)) => {
                    let retryable = status.is_server_error() || status.as_u16() == 429 || body.is_err();
                    let reason = format!("HTTP {}: {}", status.as_u16(), body.unwrap_or_default());
                    if !retryable || attempt >= max {
                        return Ok((record(TranscriptStatus::Failed, reason, latency, attempt), n));
                    }
                    tracing::debug!(item = %item.item_id, attempt, status = status.as_u16(), "retrying");
                }
                Err(e) => {
                    if attempt >= max {
                        return Err(Fatal::Unreachable(e.to_string()));
                    }
                    tracing::debug!(item = %item.item_id, attempt, error = %e, "transport error, retrying");
                }
            }
            self.backoff(attempt).await;
        }
    }
}

/// Execute `items` not yet present in `existing`, appending to the log.
async fn run_pending(
    items: &[EvalItem],
    cfg: &RunConfig,
    run_dir: &Path,
    existing: Vec<Transcript>,
) -> Result<RunLog, ClientError> {
    let campaign = Arc::new(Campaign::new(cfg)?);
    let done: HashSet<(String, crate::conditioner::Condition)> =
        existing.iter().map(|t| (t.item_id.clone(), t.condition)).collect();
    let pending: Vec<EvalItem> = items
        .iter()
        .filter(|i| !done.contains(&(i.item_id.clone(), cfg.condition)))
        .cloned()
        .collect();

    let mut out = RunLog {
        skipped: items.len() - pending.len(),
        transcripts: existing,
        ..RunLog::default()
    };
    let mut writer = TranscriptWriter::open(&log::transcripts_path(run_dir))?;

    let mut results = stream::iter(pending)
        .map(|item| Arc::clone(&campaign).process(item))
        .buffer_unordered(cfg.parallelism);

    while let Some(result) = results.next().await {
        match result {
            Ok((t, sent)) => {
                out.requests_sent += sent;
                match t.status {
                    TranscriptStatus::Ok => out.ok += 1,
                    TranscriptStatus::Failed => out.failed += 1,
                }
                writer.append(&t)?;
                out.transcripts.push(t);
            }
            Err(Fatal::Unreachable(reason)) => {
                return Err(ClientError::EndpointUnreachable {
                    url: cfg.endpoint_url.clone(),
                    reason,
                });
            }
            Err(Fatal::Auth(status)) => return Err(ClientError::AuthRejected { status }),
        }
    }
    tracing::info!(ok = out.ok, failed = out.failed, skipped = out.skipped, "run finished");
    Ok(out)
}

fn check_unique(items: &[EvalItem]) -> Result<(), ClientError> {
    let mut seen = HashSet::new();
    for i in items {
        if !seen.insert(i.item_id.as_str()) {
            return Err(ClientError::ConfigConflict(format!("duplicate item id {}", i.item_id)));
        }
    }
    Ok(())
}

/// Start a fresh run in `run_dir`, which must not already hold a run.
///
/// At most `cfg.parallelism` requests are in flight. Transport errors, HTTP
/// 429 and 5xx are retried per `cfg.retry`; an item whose retries end on an
/// HTTP error gets a `Failed` transcript and the run moves on. Exhausting
/// retries on transport errors aborts with `EndpointUnreachable`; HTTP 401 or
/// 403 aborts with `AuthRejected`. Transcripts written before an abort stay
/// valid and the run can be resumed.
pub async fn execute_run(items: &[EvalItem], cfg: &RunConfig, run_dir: &Path) -> Result<RunLog, ClientError> {
    cfg.validate()?;
    check_unique(items)?;
    std::fs::create_dir_all(run_dir).map_err(|e| ClientError::io(run_dir, e))?;
    if log::manifest_path(run_dir).exists() {
        return Err(ClientError::RunExists(run_dir.to_path_buf()));
    }
    log::write_manifest(run_dir, cfg)?;
    run_pending(items, cfg, run_dir, Vec::new()).await
}

/// Continue an interrupted run: only `(item, condition)` pairs without a
/// terminal transcript are executed. Fails with `ConfigMismatch` if the run
/// was started with a different result-affecting configuration.
pub async fn resume_run(run_dir: &Path, items: &[EvalItem], cfg: &RunConfig) -> Result<RunLog, ClientError> {
    cfg.validate()?;
    check_unique(items)?;
    let manifest = log::read_manifest(run_dir)?;
    let digest = cfg.digest();
    if manifest.config_digest != digest {
        return Err(ClientError::ConfigMismatch {
            expected: manifest.config_digest,
            found: digest,
        });
    }
    let existing = log::read_transcripts(&log::transcripts_path(run_dir))?;
    run_pending(items, cfg, run_dir, existing).await
}

/// `resume_run` when `run_dir` already holds a run, `execute_run` otherwise.
pub async fn run_or_resume(items: &[EvalItem], cfg: &RunConfig, run_dir: &Path) -> Result<RunLog, ClientError> {
    if log::manifest_path(run_dir).exists() {
        resume_run(run_dir, items, cfg).await
    } else {
        execute_run(items, cfg, run_dir).await
    }
}
