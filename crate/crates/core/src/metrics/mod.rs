//! Hallucination scoring: POPE yes/no metrics and CHAIR caption metrics.

mod chair;
mod pope;

pub use chair::{extract_objects, score_chair, CaptionResult, ChairMetrics};
pub use pope::{parse_polar_answer, score_pope, Confusion, PolarAnswer, PopeItemResult, PopeMetrics};

use std::collections::HashMap;
use thiserror::Error;

use crate::client::Transcript;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{} item(s) have no transcript: {}", .0.len(), .0.iter().take(5).cloned().collect::<Vec<_>>().join(", "))]
    MissingTranscript(Vec<String>),
    #[error("item {0} has no gold label for this task")]
    MissingGold(String),
}

/// Index by item id. When an id repeats, the last transcript wins.
fn index_transcripts(transcripts: &[Transcript]) -> HashMap<&str, &Transcript> {
    transcripts.iter().map(|t| (t.item_id.as_str(), t)).collect()
}
