//! Benchmark ingestion: POPE polar questions, COCO caption tasks, seeded
//! sampling and the object lexicon used by CHAIR.

mod lexicon;
mod sampling;

pub use lexicon::{
    coco_categories, load_synonym_lexicon, load_synonym_lexicon_with, normalize_text, Category,
    CategoryId, Lexicon, COCO_CATEGORIES, DEFAULT_SYNONYMS,
};
pub use sampling::sample_indices;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Instruction used for the caption task.
pub const DESCRIBE_PROMPT: &str = "Describe this image in detail.";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{} image(s) missing, first: {}", .0.len(), .0.first().map(|p| p.display().to_string()).unwrap_or_default())]
    MissingImage(Vec<PathBuf>),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("cannot sample {requested} items from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("phrase {phrase:?} maps to both category {first} and {second}")]
    DuplicatePhrase {
        phrase: String,
        first: CategoryId,
        second: CategoryId,
    },
    #[error("phrase {phrase:?} names unknown category {category:?}")]
    UnknownCategory { phrase: String, category: String },
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PolarQuestion,
    Caption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polar {
    Yes,
    No,
}

/// One benchmark unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub image_path: PathBuf,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_polar: Option<Polar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_categories: Option<BTreeSet<CategoryId>>,
}

impl EvalItem {
    pub fn polar(item_id: impl Into<String>, image: impl Into<PathBuf>, question: impl Into<String>, gold: Polar) -> Self {
        Self {
            item_id: item_id.into(),
            image_path: image.into(),
            task: TaskKind::PolarQuestion,
            question: Some(question.into()),
            gold_polar: Some(gold),
            gold_categories: None,
        }
    }

    pub fn caption(item_id: impl Into<String>, image: impl Into<PathBuf>, gold: BTreeSet<CategoryId>) -> Self {
        Self {
            item_id: item_id.into(),
            image_path: image.into(),
            task: TaskKind::Caption,
            question: Some(DESCRIBE_PROMPT.to_string()),
            gold_polar: None,
            gold_categories: Some(gold),
        }
    }

    /// Checks the per-task field requirements.
    pub fn validate(&self) -> Result<(), String> {
        match self.task {
            TaskKind::PolarQuestion if self.question.is_none() || self.gold_polar.is_none() => {
                Err(format!("polar item {} lacks question or gold answer", self.item_id))
            }
            TaskKind::Caption if self.gold_categories.is_none() => {
                Err(format!("caption item {} lacks gold categories", self.item_id))
            }
            _ => Ok(()),
        }
    }
}

/// A POPE line. `text`/`question` and `label`/`answer` are accepted
/// interchangeably; `question_id` is optional.
#[derive(Debug, Deserialize)]
struct PopeRecord {
    #[serde(default)]
    question_id: Option<serde_json::Value>,
    image: String,
    #[serde(alias = "question")]
    text: String,
    #[serde(alias = "answer")]
    label: String,
}

fn parse_polar_label(label: &str) -> Option<Polar> {
    match label.trim().to_ascii_lowercase().as_str() {
        "yes" => Some(Polar::Yes),
        "no" => Some(Polar::No),
        _ => None,
    }
}

/// Load a POPE annotation file (one JSON object per line).
pub fn load_pope(annotation_file: &Path, image_dir: &Path) -> Result<Vec<EvalItem>, CorpusError> {
    let file = std::fs::File::open(annotation_file).map_err(|e| CorpusError::io(annotation_file, e))?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::io(annotation_file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PopeRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let gold = parse_polar_label(&rec.label).ok_or_else(|| CorpusError::MalformedRecord {
            line: line_no,
            reason: format!("label must be yes or no, got {:?}", rec.label),
        })?;
        let item_id = match rec.question_id {
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
            None => line_no.to_string(),
        };
        if !seen.insert(item_id.clone()) {
            return Err(CorpusError::DuplicateItem(item_id));
        }
        let image_path = image_dir.join(&rec.image);
        if !image_path.is_file() {
            missing.push(image_path.clone());
        }
        items.push(EvalItem::polar(item_id, image_path, rec.text, gold));
    }
    if !missing.is_empty() {
        return Err(CorpusError::MissingImage(missing));
    }
    Ok(items)
}

/// Uniform seeded sample without replacement, kept in original order.
/// See [`sample_indices`] for the exact generator.
pub fn sample_items(items: &[EvalItem], n: usize, seed: u64) -> Result<Vec<EvalItem>, CorpusError> {
    if n > items.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    Ok(sample_indices(items.len(), n, seed)
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

#[derive(Debug, Deserialize)]
struct CocoInstances {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: CategoryId,
}

/// Sample `n` images from a COCO instances file into caption items whose
/// gold set is the union of the image's annotated categories. Images are
/// ordered by id before sampling. Images without annotations are kept with
/// an empty gold set.
pub fn load_coco_caption_task(
    image_dir: &Path,
    instances_file: &Path,
    n: usize,
    seed: u64,
) -> Result<Vec<EvalItem>, CorpusError> {
    let text = std::fs::read_to_string(instances_file).map_err(|e| CorpusError::io(instances_file, e))?;
    let coco: CocoInstances = serde_json::from_str(&text).map_err(|e| CorpusError::MalformedRecord {
        line: e.line(),
        reason: e.to_string(),
    })?;

    let mut gold: BTreeMap<u64, BTreeSet<CategoryId>> = BTreeMap::new();
    for img in &coco.images {
        if gold.insert(img.id, BTreeSet::new()).is_some() {
            return Err(CorpusError::DuplicateItem(img.id.to_string()));
        }
    }
    for ann in &coco.annotations {
        gold.get_mut(&ann.image_id)
            .ok_or_else(|| CorpusError::MalformedRecord {
                line: 0,
                reason: format!("annotation references unknown image {}", ann.image_id),
            })?
            .insert(ann.category_id);
    }

    let mut images: Vec<&CocoImage> = coco.images.iter().collect();
    images.sort_by_key(|im| im.id);
    if n > images.len() {
        return Err(CorpusError::SampleTooLarge { requested: n, available: images.len() });
    }

    let mut items = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for idx in sample_indices(images.len(), n, seed) {
        let img = images[idx];
        let path = image_dir.join(&img.file_name);
        if !path.is_file() {
            missing.push(path.clone());
        }
        let cats = gold.remove(&img.id).unwrap_or_default();
        if cats.is_empty() {
            tracing::warn!(image_id = img.id, "image has no instance annotations; every mention will count as hallucinated");
        }
        items.push(EvalItem::caption(img.id.to_string(), path, cats));
    }
    if !missing.is_empty() {
        return Err(CorpusError::MissingImage(missing));
    }
    Ok(items)
}

/// Write items as one JSON object per line.
pub fn write_manifest(path: &Path, items: &[EvalItem]) -> Result<(), CorpusError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| CorpusError::io(path, e))?);
    for item in items {
        let line = serde_json::to_string(item).expect("EvalItem serializes");
        writeln!(f, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    f.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<EvalItem>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        item.validate()
            .map_err(|reason| CorpusError::MalformedRecord { line: i + 1, reason })?;
        if !seen.insert(item.item_id.clone()) {
            return Err(CorpusError::DuplicateItem(item.item_id));
        }
        items.push(item);
    }
    Ok(items)
}
