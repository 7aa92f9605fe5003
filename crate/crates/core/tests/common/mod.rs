//! In-process chat-completions endpoint for harness tests, plus fixtures.
#![allow(dead_code)]

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use pii_core::corpus::{EvalItem, Polar};

pub type Answer = dyn Fn(&serde_json::Value) -> String + Send + Sync;

pub struct Behavior {
    /// Answers with HTTP 500 for the first `fail_first` attempts of each
    /// distinct request body.
    pub fail_first: u32,
    /// Fixed status for every request, overriding everything else.
    pub status: Option<u16>,
    pub delay: Duration,
    pub require_token: Option<String>,
    pub answer: Box<Answer>,
}

impl Default for Behavior {
    fn default() -> Self {
        Self {
            fail_first: 0,
            status: None,
            delay: Duration::ZERO,
            require_token: None,
            answer: Box::new(|_| "Yes".to_string()),
        }
    }
}

#[derive(Default)]
pub struct Stats {
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub requests: AtomicUsize,
    attempts: Mutex<HashMap<Bytes, u32>>,
}

struct Shared {
    behavior: Behavior,
    stats: Arc<Stats>,
}

pub struct MockServer {
    pub url: String,
    pub stats: Arc<Stats>,
}

impl MockServer {
    pub async fn start(behavior: Behavior) -> Self {
        let stats = Arc::new(Stats::default());
        let shared = Arc::new(Shared { behavior, stats: Arc::clone(&stats) });
        let app = Router::new().route("/v1/chat/completions", post(handle)).with_state(shared);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            url: format!("http://{addr}/v1/chat/completions"),
            stats,
        }
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }
}

struct InFlight<'a>(&'a Stats);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn handle(State(shared): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> (StatusCode, String) {
    let stats = &shared.stats;
    let b = &shared.behavior;
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let _guard = InFlight(stats);

    if !b.delay.is_zero() {
        tokio::time::sleep(b.delay).await;
    }
    if let Some(token) = &b.require_token {
        let expected = format!("Bearer {token}");
        if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some(expected.as_str()) {
            return (StatusCode::UNAUTHORIZED, "missing token".into());
        }
    }
    if let Some(s) = b.status {
        return (StatusCode::from_u16(s).unwrap(), "forced".into());
    }
    let attempt = {
        let mut m = stats.attempts.lock().unwrap();
        let n = m.entry(body.clone()).or_insert(0);
        *n += 1;
        *n
    };
    if attempt <= b.fail_first {
        return (StatusCode::INTERNAL_SERVER_ERROR, "transient".into());
    }
    let req: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()),
    };
    let text = (b.answer)(&req);
    let resp = serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    });
    (StatusCode::OK, resp.to_string())
}

/// Text parts of the last user message.
pub fn user_text(req: &serde_json::Value) -> String {
    req["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_array())
        .map(|parts| {
            parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .unwrap_or_default()
}

pub fn write_image(dir: &Path, name: &str, w: u32, h: u32) -> PathBuf {
    let img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 7) as u8, (y * 11) as u8, ((x + y) * 3) as u8]));
    let p = dir.join(name);
    img.save(&p).unwrap();
    p
}

/// `n` polar items over one small image; item `i` asks about object `i`,
/// gold Yes for even `i`.
pub fn polar_items(dir: &Path, n: usize) -> Vec<EvalItem> {
    let img = write_image(dir, "img.png", 24, 16);
    (0..n)
        .map(|i| {
            let gold = if i % 2 == 0 { Polar::Yes } else { Polar::No };
            EvalItem::polar(i.to_string(), &img, format!("Is there a thing{i} in the image?"), gold)
        })
        .collect()
}

pub mod oracles;
pub mod synth;
