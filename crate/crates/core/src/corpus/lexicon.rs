//! Object vocabulary for caption scoring: category list plus a phrase →
//! category synonym map.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::CorpusError;

pub type CategoryId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

/// The 80 COCO object categories with their official (non-contiguous) ids.
pub const COCO_CATEGORIES: [(CategoryId, &str); 80] = [
    (1, "person"), (2, "bicycle"), (3, "car"), (4, "motorcycle"), (5, "airplane"),
    (6, "bus"), (7, "train"), (8, "truck"), (9, "boat"), (10, "traffic light"),
    (11, "fire hydrant"), (13, "stop sign"), (14, "parking meter"), (15, "bench"),
    (16, "bird"), (17, "cat"), (18, "dog"), (19, "horse"), (20, "sheep"), (21, "cow"),
    (22, "elephant"), (23, "bear"), (24, "zebra"), (25, "giraffe"), (27, "backpack"),
    (28, "umbrella"), (31, "handbag"), (32, "tie"), (33, "suitcase"), (34, "frisbee"),
    (35, "skis"), (36, "snowboard"), (37, "sports ball"), (38, "kite"),
    (39, "baseball bat"), (40, "baseball glove"), (41, "skateboard"), (42, "surfboard"),
    (43, "tennis racket"), (44, "bottle"), (46, "wine glass"), (47, "cup"), (48, "fork"),
    (49, "knife"), (50, "spoon"), (51, "bowl"), (52, "banana"), (53, "apple"),
    (54, "sandwich"), (55, "orange"), (56, "broccoli"), (57, "carrot"), (58, "hot dog"),
    (59, "pizza"), (60, "donut"), (61, "cake"), (62, "chair"), (63, "couch"),
    (64, "potted plant"), (65, "bed"), (67, "dining table"), (70, "toilet"), (72, "tv"),
    (73, "laptop"), (74, "mouse"), (75, "remote"), (76, "keyboard"), (77, "cell phone"),
    (78, "microwave"), (79, "oven"), (80, "toaster"), (81, "sink"), (82, "refrigerator"),
    (84, "book"), (85, "clock"), (86, "vase"), (87, "scissors"), (88, "teddy bear"),
    (89, "hair drier"), (90, "toothbrush"),
];

/// Default synonym table shipped with the crate (`phrase<TAB>category`).
pub const DEFAULT_SYNONYMS: &str = include_str!("../../assets/coco_synonyms.tsv");

pub fn coco_categories() -> Vec<Category> {
    COCO_CATEGORIES
        .iter()
        .map(|&(id, name)| Category { id, name: name.to_string() })
        .collect()
}

/// Lowercase, turn every non-alphanumeric character into a space, and
/// collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Category vocabulary and an injective-per-phrase synonym map.
///
/// Every category name is a phrase for itself. Phrases are stored
/// normalized (see [`normalize_text`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    categories: Vec<Category>,
    synonyms: BTreeMap<String, CategoryId>,
}

impl Lexicon {
    /// Build from `(phrase, category name)` pairs over `categories`.
    pub fn new<'a, I>(categories: Vec<Category>, entries: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let by_name: HashMap<String, CategoryId> = categories
            .iter()
            .map(|c| (normalize_text(&c.name), c.id))
            .collect();
        let mut synonyms = BTreeMap::new();
        let mut insert = |phrase: String, id: CategoryId| -> Result<(), CorpusError> {
            if phrase.is_empty() {
                return Ok(());
            }
            match synonyms.get(&phrase) {
                Some(&existing) if existing != id => Err(CorpusError::DuplicatePhrase {
                    phrase,
                    first: existing,
                    second: id,
                }),
                _ => {
                    synonyms.insert(phrase, id);
                    Ok(())
                }
            }
        };
        for (name, &id) in &by_name {
            insert(name.clone(), id)?;
        }
        for (phrase, category) in entries {
            let id = *by_name
                .get(&normalize_text(category))
                .ok_or_else(|| CorpusError::UnknownCategory {
                    phrase: phrase.to_string(),
                    category: category.to_string(),
                })?;
            insert(normalize_text(phrase), id)?;
        }
        Ok(Self { categories, synonyms })
    }

    /// Only the category names, each mapping to itself.
    pub fn identity(categories: Vec<Category>) -> Result<Self, CorpusError> {
        Self::new(categories, std::iter::empty())
    }

    /// COCO categories with the bundled synonym table.
    pub fn coco_default() -> Self {
        let entries = parse_tsv(DEFAULT_SYNONYMS).expect("bundled synonym table is well-formed");
        Self::new(
            coco_categories(),
            entries.iter().map(|(p, c)| (p.as_str(), c.as_str())),
        )
        .expect("bundled synonym table is consistent")
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category_name(&self, id: CategoryId) -> Option<&str> {
        self.categories.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }

    pub fn phrases(&self) -> impl Iterator<Item = (&str, CategoryId)> {
        self.synonyms.iter().map(|(p, &id)| (p.as_str(), id))
    }

    pub fn resolve(&self, phrase: &str) -> Option<CategoryId> {
        self.synonyms.get(&normalize_text(phrase)).copied()
    }

    pub fn len(&self) -> usize {
        self.synonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty()
    }
}

fn parse_tsv(text: &str) -> Result<Vec<(String, String)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (phrase, category) = line.split_once('\t').ok_or_else(|| CorpusError::MalformedRecord {
            line: i + 1,
            reason: "expected phrase<TAB>category".into(),
        })?;
        out.push((phrase.trim().to_string(), category.trim().to_string()));
    }
    Ok(out)
}

/// Load a `phrase<TAB>category-name` file against the COCO categories.
pub fn load_synonym_lexicon(path: &Path) -> Result<Lexicon, CorpusError> {
    load_synonym_lexicon_with(path, coco_categories())
}

pub fn load_synonym_lexicon_with(path: &Path, categories: Vec<Category>) -> Result<Lexicon, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let entries = parse_tsv(&text)?;
    Lexicon::new(categories, entries.iter().map(|(p, c)| (p.as_str(), c.as_str())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats(names: &[&str]) -> Vec<Category> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| Category { id: i as u32 + 1, name: n.to_string() })
            .collect()
    }

    #[test]
    fn synonyms_collapse() {
        let lex = Lexicon::new(cats(&["dog"]), [("puppy", "dog"), ("dog", "dog")]).unwrap();
        assert_eq!(lex.resolve("puppy"), Some(1));
        assert_eq!(lex.resolve("Dog"), Some(1));
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn conflicting_phrase_rejected() {
        let err = Lexicon::new(cats(&["dog", "cat"]), [("dog", "cat")]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicatePhrase { .. }));
    }

    #[test]
    fn unknown_category_rejected() {
        let err = Lexicon::new(cats(&["dog"]), [("kitten", "cat")]).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownCategory { .. }));
    }

    #[test]
    fn identity_coco_has_80_categories() {
        let lex = Lexicon::identity(coco_categories()).unwrap();
        assert_eq!(lex.categories().len(), 80);
        assert_eq!(lex.len(), 80);
        for c in lex.categories() {
            assert_eq!(lex.resolve(&c.name), Some(c.id));
        }
    }

    #[test]
    fn phrases_are_normalized() {
        let lex = Lexicon::new(cats(&["tv"]), [("T.V.", "tv"), ("Television  Set", "tv")]).unwrap();
        let phrases: Vec<_> = lex.phrases().map(|(p, _)| p.to_string()).collect();
        assert!(phrases.contains(&"t v".to_string()));
        assert!(phrases.contains(&"television set".to_string()));
    }

    #[test]
    fn bundled_table_loads() {
        let lex = Lexicon::coco_default();
        assert_eq!(lex.categories().len(), 80);
        assert_eq!(lex.resolve("puppy"), Some(18));
        assert_eq!(lex.resolve("man"), Some(1));
        assert_eq!(lex.resolve("hot dog"), Some(58));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.tsv");
        std::fs::write(&p, "# comment\npuppy\tdog\nkitten\tcat\n").unwrap();
        let lex = load_synonym_lexicon(&p).unwrap();
        assert_eq!(lex.resolve("kitten"), Some(17));
        std::fs::write(&p, "puppy dog\n").unwrap();
        assert!(matches!(
            load_synonym_lexicon(&p),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }
}
