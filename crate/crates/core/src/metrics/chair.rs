use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

use super::{index_transcripts, MetricsError};
use crate::client::{Transcript, TranscriptStatus};
use crate::corpus::{normalize_text, CategoryId, EvalItem, Lexicon};

/// `token` matches `word` when equal, or equal after dropping a trailing
/// `s` or `es`.
fn token_matches(token: &str, word: &str) -> bool {
    token == word
        || token.strip_suffix('s') == Some(word)
        || token.strip_suffix("es") == Some(word)
}

/// Phrases grouped for the greedy scan: longest first, exact-match lookup
/// per length, then the plural-tolerant fallback in lexicographic order.
struct PhraseTable<'a> {
    by_len: Vec<(usize, HashMap<&'a str, CategoryId>, Vec<(Vec<&'a str>, CategoryId)>)>,
}

impl<'a> PhraseTable<'a> {
    fn new(lex: &'a Lexicon) -> Self {
        let mut groups: std::collections::BTreeMap<usize, (HashMap<&'a str, CategoryId>, Vec<(Vec<&'a str>, CategoryId)>)> =
            Default::default();
        for (phrase, id) in lex.phrases() {
            let words: Vec<&str> = phrase.split(' ').collect();
            let g = groups.entry(words.len()).or_default();
            g.0.insert(phrase, id);
            g.1.push((words, id));
        }
        let by_len = groups.into_iter().rev().map(|(n, (exact, list))| (n, exact, list)).collect();
        Self { by_len }
    }

    fn match_at(&self, tokens: &[&str], i: usize) -> Option<(usize, CategoryId)> {
        for (len, exact, list) in &self.by_len {
            let len = *len;
            if i + len > tokens.len() {
                continue;
            }
            let window = &tokens[i..i + len];
            if let Some(&id) = exact.get(window.join(" ").as_str()) {
                return Some((len, id));
            }
            for (words, id) in list {
                if window.iter().zip(words).all(|(t, w)| token_matches(t, w)) {
                    return Some((len, *id));
                }
            }
        }
        None
    }
}

/// Set of lexicon categories mentioned in `caption`.
///
/// The caption is normalized, then scanned left to right; at each position
/// the longest matching phrase wins and its tokens are consumed, so "hot dog"
/// never also yields "dog".
pub fn extract_objects(caption: &str, lex: &Lexicon) -> BTreeSet<CategoryId> {
    extract_with(&PhraseTable::new(lex), caption)
}

fn extract_with(table: &PhraseTable<'_>, caption: &str) -> BTreeSet<CategoryId> {
    let norm = normalize_text(caption);
    let tokens: Vec<&str> = norm.split_whitespace().collect();
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        match table.match_at(&tokens, i) {
            Some((len, id)) => {
                found.insert(id);
                i += len;
            }
            None => i += 1,
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResult {
    pub item_id: String,
    pub mentioned: BTreeSet<CategoryId>,
    pub hallucinated: BTreeSet<CategoryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairMetrics {
    /// Captions with a hallucination / captions mentioning any object.
    pub chair_s: f64,
    /// Hallucinated objects / mentioned objects, unique per caption, pooled.
    pub chair_i: f64,
    pub n_captions: u64,
    /// Captions that mention no lexicon object; outside both denominators.
    pub n_no_mention: u64,
    pub n_failed: u64,
    pub total_mentioned: u64,
    pub total_hallucinated: u64,
    pub per_caption: Vec<CaptionResult>,
}

impl ChairMetrics {
    pub fn from_results(per_caption: Vec<CaptionResult>, n_failed: u64) -> Self {
        let mut total_mentioned = 0u64;
        let mut total_hallucinated = 0u64;
        let mut with_mentions = 0u64;
        let mut with_halluc = 0u64;
        for c in &per_caption {
            total_mentioned += c.mentioned.len() as u64;
            total_hallucinated += c.hallucinated.len() as u64;
            if !c.mentioned.is_empty() {
                with_mentions += 1;
            }
            if !c.hallucinated.is_empty() {
                with_halluc += 1;
            }
        }
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            chair_s: ratio(with_halluc, with_mentions),
            chair_i: ratio(total_hallucinated, total_mentioned),
            n_captions: per_caption.len() as u64,
            n_no_mention: per_caption.len() as u64 - with_mentions,
            n_failed,
            total_mentioned,
            total_hallucinated,
            per_caption,
        }
    }

    pub fn merge(mut self, other: ChairMetrics) -> ChairMetrics {
        self.per_caption.extend(other.per_caption);
        ChairMetrics::from_results(self.per_caption, self.n_failed + other.n_failed)
    }
}

/// CHAIR scores for caption transcripts. Failed calls contribute an empty
/// caption (no mentions) and are counted in `n_failed`.
pub fn score_chair(transcripts: &[Transcript], items: &[EvalItem], lex: &Lexicon) -> Result<ChairMetrics, MetricsError> {
    let by_id = index_transcripts(transcripts);
    let missing: Vec<String> = items
        .iter()
        .filter(|i| !by_id.contains_key(i.item_id.as_str()))
        .map(|i| i.item_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingTranscript(missing));
    }

    let table = PhraseTable::new(lex);
    let mut per_caption = Vec::with_capacity(items.len());
    let mut n_failed = 0;
    for item in items {
        let gold = item
            .gold_categories
            .as_ref()
            .ok_or_else(|| MetricsError::MissingGold(item.item_id.clone()))?;
        let t = by_id[item.item_id.as_str()];
        let mentioned = match t.status {
            TranscriptStatus::Ok => extract_with(&table, &t.raw_response),
            TranscriptStatus::Failed => {
                n_failed += 1;
                BTreeSet::new()
            }
        };
        let hallucinated = mentioned.difference(gold).copied().collect();
        per_caption.push(CaptionResult {
            item_id: item.item_id.clone(),
            mentioned,
            hallucinated,
        });
    }
    Ok(ChairMetrics::from_results(per_caption, n_failed))
}
