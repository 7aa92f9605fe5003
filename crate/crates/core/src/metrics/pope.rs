use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::{index_transcripts, MetricsError};
use crate::client::{Transcript, TranscriptStatus};
use crate::corpus::{EvalItem, Polar};

/// A parsed yes/no answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarAnswer {
    Yes,
    No,
    Abstain,
}

/// First `yes` or `no` token after lowercasing and replacing punctuation
/// with whitespace; `Abstain` when neither appears.
pub fn parse_polar_answer(text: &str) -> PolarAnswer {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    for tok in cleaned.split_whitespace() {
        match tok {
            "yes" => return PolarAnswer::Yes,
            "no" => return PolarAnswer::No,
            _ => {}
        }
    }
    PolarAnswer::Abstain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeItemResult {
    pub item_id: String,
    pub predicted: PolarAnswer,
    pub gold: Polar,
    pub correct: bool,
}

/// Binary confusion counts with `Yes` as the positive class.
///
/// An abstention on a gold-yes item is a false negative. An abstention on a
/// gold-no item is neither a true negative nor a false positive and is
/// counted in `abstain_no`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub abstain_no: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.abstain_no
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_ratio: f64,
    pub n_total: u64,
    pub n_abstain: u64,
    /// Transcripts with `Failed` status; included in `n_abstain`.
    pub n_failed: u64,
    pub confusion: Confusion,
    pub per_item: Vec<PopeItemResult>,
}

impl PopeMetrics {
    /// Ratios from pooled counts. Empty input yields all-zero ratios.
    pub fn from_results(per_item: Vec<PopeItemResult>, n_failed: u64) -> Self {
        let mut c = Confusion::default();
        let mut n_abstain = 0;
        for r in &per_item {
            let said_yes = r.predicted == PolarAnswer::Yes;
            if r.predicted == PolarAnswer::Abstain {
                n_abstain += 1;
            }
            match (said_yes, r.gold) {
                (true, Polar::Yes) => c.tp += 1,
                (true, Polar::No) => c.fp += 1,
                (false, Polar::Yes) => c.fn_ += 1,
                (false, Polar::No) if r.predicted == PolarAnswer::No => c.tn += 1,
                (false, Polar::No) => c.abstain_no += 1,
            }
        }
        let n_total = per_item.len() as u64;
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(c.tp + c.tn, n_total),
            precision,
            recall,
            f1,
            yes_ratio: ratio(c.tp + c.fp, n_total),
            n_total,
            n_abstain,
            n_failed,
            confusion: c,
            per_item,
        }
    }

    /// Combine shards scored separately. Ratios are recomputed from pooled
    /// counts, so the merge is associative.
    pub fn merge(mut self, other: PopeMetrics) -> PopeMetrics {
        self.per_item.extend(other.per_item);
        PopeMetrics::from_results(self.per_item, self.n_failed + other.n_failed)
    }
}

/// Score polar-question transcripts against gold answers.
///
/// Abstentions and failed calls are wrong answers and count as non-yes
/// predictions.
pub fn score_pope(transcripts: &[Transcript], items: &[EvalItem]) -> Result<PopeMetrics, MetricsError> {
    let by_id: HashMap<&str, &Transcript> = index_transcripts(transcripts);
    let missing: Vec<String> = items
        .iter()
        .filter(|i| !by_id.contains_key(i.item_id.as_str()))
        .map(|i| i.item_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingTranscript(missing));
    }

    let mut per_item = Vec::with_capacity(items.len());
    let mut n_failed = 0;
    for item in items {
        let gold = item
            .gold_polar
            .ok_or_else(|| MetricsError::MissingGold(item.item_id.clone()))?;
        let t = by_id[item.item_id.as_str()];
        let predicted = match t.status {
            TranscriptStatus::Ok => parse_polar_answer(&t.raw_response),
            TranscriptStatus::Failed => {
                n_failed += 1;
                PolarAnswer::Abstain
            }
        };
        let correct = matches!(
            (predicted, gold),
            (PolarAnswer::Yes, Polar::Yes) | (PolarAnswer::No, Polar::No)
        );
        per_item.push(PopeItemResult {
            item_id: item.item_id.clone(),
            predicted,
            gold,
            correct,
        });
    }
    Ok(PopeMetrics::from_results(per_item, n_failed))
}
