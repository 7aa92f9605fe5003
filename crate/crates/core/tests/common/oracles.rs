//! Independent reference scorers, written without reference to the library's
//! scanning or counting code.

use std::collections::BTreeSet;

use pii_core::client::{Transcript, TranscriptStatus};
use pii_core::conditioner::Condition;
use pii_core::corpus::{Category, CategoryId, EvalItem, Lexicon, Polar};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_pcg::Pcg64;

pub fn transcript(item_id: &str, text: &str) -> Transcript {
    Transcript {
        item_id: item_id.to_string(),
        condition: Condition::Baseline,
        request_digest: String::new(),
        user_text_sent: None,
        image_hash: String::new(),
        raw_response: text.to_string(),
        latency_ms: 1,
        attempt_count: 1,
        status: TranscriptStatus::Ok,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Said {
    Yes,
    No,
    Neither,
}

/// First of "yes"/"no" among whitespace tokens after lowercasing and turning
/// every non-alphanumeric character into a space.
pub fn oracle_parse(text: &str) -> Said {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    for tok in cleaned.split(' ') {
        if tok == "yes" {
            return Said::Yes;
        }
        if tok == "no" {
            return Said::No;
        }
    }
    Said::Neither
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopeOracle {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_ratio: f64,
}

/// Straight from the definitions: positive class Yes, anything that is not
/// an explicit yes counts as a negative prediction, only explicit correct
/// answers count as correct.
pub fn oracle_pope(answers: &[(&str, Polar)]) -> PopeOracle {
    let n = answers.len() as f64;
    let pred_yes = answers.iter().filter(|(a, _)| oracle_parse(a) == Said::Yes).count() as f64;
    let gold_yes = answers.iter().filter(|(_, g)| *g == Polar::Yes).count() as f64;
    let hits_yes = answers
        .iter()
        .filter(|(a, g)| oracle_parse(a) == Said::Yes && *g == Polar::Yes)
        .count() as f64;
    let correct = answers
        .iter()
        .filter(|(a, g)| matches!((oracle_parse(a), g), (Said::Yes, Polar::Yes) | (Said::No, Polar::No)))
        .count() as f64;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = div(hits_yes, pred_yes);
    let recall = div(hits_yes, gold_yes);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PopeOracle {
        accuracy: div(correct, n),
        precision,
        recall,
        f1,
        yes_ratio: div(pred_yes, n),
    }
}

/// Surface forms a phrase word may take: itself, `+s`, `+es`.
fn variants(phrase: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    for word in phrase.split(' ') {
        let mut next = Vec::new();
        for prefix in &out {
            for form in [word.to_string(), format!("{word}s"), format!("{word}es")] {
                next.push(if prefix.is_empty() { form } else { format!("{prefix} {form}") });
            }
        }
        out = next;
    }
    out
}

/// Every phrase occurrence found by substring search on word boundaries;
/// occurrences strictly inside a longer occurrence are dropped.
pub fn oracle_mentions(caption: &str, lex: &Lexicon) -> BTreeSet<CategoryId> {
    let cleaned: String = caption
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let padded = format!(" {} ", cleaned.split_whitespace().collect::<Vec<_>>().join(" "));

    let mut hits: Vec<(usize, usize, CategoryId)> = Vec::new();
    for (phrase, id) in lex.phrases() {
        for v in variants(phrase) {
            let needle = format!(" {v} ");
            let mut from = 0;
            while let Some(pos) = padded[from..].find(&needle) {
                let start = from + pos;
                hits.push((start, start + needle.len(), id));
                from = start + 1;
            }
        }
    }
    let inside = |a: &(usize, usize, CategoryId), b: &(usize, usize, CategoryId)| {
        b.0 <= a.0 && a.1 <= b.1 && (b.1 - b.0) > (a.1 - a.0)
    };
    hits.iter()
        .filter(|a| !hits.iter().any(|b| inside(a, b)))
        .map(|h| h.2)
        .collect()
}

/// `(chair_i, chair_s)` from per-caption mention sets.
pub fn oracle_chair(mentions: &[BTreeSet<CategoryId>], gold: &[BTreeSet<CategoryId>]) -> (f64, f64) {
    let mut mentioned = 0usize;
    let mut hallucinated = 0usize;
    let mut captions_with_mentions = 0usize;
    let mut captions_with_halluc = 0usize;
    for (m, g) in mentions.iter().zip(gold) {
        let h = m.iter().filter(|c| !g.contains(c)).count();
        mentioned += m.len();
        hallucinated += h;
        captions_with_mentions += usize::from(!m.is_empty());
        captions_with_halluc += usize::from(h > 0);
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (div(hallucinated, mentioned), div(captions_with_halluc, captions_with_mentions))
}

/// Seven categories and three synonyms: ten phrases, with "hot dog" and
/// "dining table" containing shorter phrases.
pub fn ten_phrase_lexicon() -> Lexicon {
    let cats = [
        (6, "bus"),
        (17, "cat"),
        (18, "dog"),
        (58, "hot dog"),
        (62, "chair"),
        (67, "dining table"),
        (88, "teddy bear"),
    ]
    .into_iter()
    .map(|(id, name)| Category { id, name: name.to_string() })
    .collect();
    let lex = Lexicon::new(cats, [("puppy", "dog"), ("kitten", "cat"), ("table", "dining table")]).unwrap();
    assert_eq!(lex.len(), 10);
    lex
}

/// Twenty captions with their gold category ids.
pub fn twenty_captions() -> Vec<(&'static str, Vec<CategoryId>)> {
    vec![
        ("A dog sits on a chair next to a cat.", vec![18, 62]),
        ("Two dogs and a hot dog on a dining table.", vec![18, 67]),
        ("A kitten naps under the table.", vec![17, 67]),
        ("Hot dogs are served at the table near a bus.", vec![58, 67]),
        ("A teddy bear on a chair.", vec![88, 62]),
        ("Nothing but sky and sea.", vec![]),
        ("A red bus drives past puppies.", vec![6]),
        ("Chairs, chairs, and more chairs!", vec![62]),
        ("The dining tables are empty; no dogs here.", vec![67]),
        ("A cat-shaped teddy bear sits on a bus seat.", vec![88, 6]),
        ("Kittens chase a puppy around the dining room.", vec![17, 18]),
        ("A man eats a hot dog while his dog watches.", vec![58]),
        ("Buses line up by the curb.", vec![6]),
        ("A table, a chair, a cat, and a dog.", vec![67, 62, 17, 18]),
        ("The hot sun shines on a dog.", vec![18]),
        ("A busy street with no vehicles.", vec![]),
        ("Teddy bears and cats share a chair.", vec![88]),
        ("A dining area without furniture.", vec![]),
        ("The puppy's bowl sits by the chair leg.", vec![18, 62]),
        ("A cat on a hot dog stand.", vec![17, 58]),
    ]
}

const YES: &[&str] = &["Yes", "yes.", "YES, there is one.", "Yes! I can see it", "  yes"];
const NO: &[&str] = &["No", "no.", "NO, there isn't.", "No, nothing like that.", "no yes"];
const UNSURE: &[&str] = &["I cannot tell.", "", "Maybe", "Possibly a nose?", "yesterday, nobody"];

/// Items, transcripts and `(answer, gold)` rows with a random number of
/// each answer kind per gold label, shuffled.
pub fn random_pope_case(rng: &mut Pcg64) -> (Vec<EvalItem>, Vec<Transcript>, Vec<(String, Polar)>) {
    let mut rows: Vec<(String, Polar)> = Vec::new();
    for (pool, gold) in [
        (YES, Polar::Yes),
        (YES, Polar::No),
        (NO, Polar::Yes),
        (NO, Polar::No),
        (UNSURE, Polar::Yes),
        (UNSURE, Polar::No),
    ] {
        let k = rng.gen_range(0..12);
        for _ in 0..k {
            rows.push((pool.choose(rng).unwrap().to_string(), gold));
        }
    }
    rows.shuffle(rng);
    let items = rows
        .iter()
        .enumerate()
        .map(|(i, (_, g))| EvalItem::polar(i.to_string(), "x.png", "Is there a dog?", *g))
        .collect();
    let transcripts = rows.iter().enumerate().map(|(i, (a, _))| transcript(&i.to_string(), a)).collect();
    (items, transcripts, rows)
}
