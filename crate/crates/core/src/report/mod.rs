//! Metric reports, cross-setting comparison tables, and file output as CSV,
//! markdown and SVG.

mod svg;
mod table;

pub use svg::{heatmap_grid, line_plot, scatter_plot, HeatmapPanel, LinePlot, ScatterPlot, Series};
pub use table::{format_delta, format_value, read_table_csv, table_from_csv, table_to_csv, table_to_markdown, write_table_csv};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::client::{InstructionMode, RunManifest};
use crate::conditioner::Condition;
use crate::metrics::{ChairMetrics, PopeMetrics};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("baseline setting {0:?} is not among the reports")]
    MissingBaseline(String),
    #[error("setting {0:?} appears more than once")]
    DuplicateSetting(String),
    #[error("cannot compare {0} scores with {1} scores in one table")]
    MixedTasks(&'static str, &'static str),
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ReportError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ReportError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Scores {
    Pope(PopeMetrics),
    Chair(ChairMetrics),
}

impl Scores {
    pub fn task(&self) -> &'static str {
        match self {
            Scores::Pope(_) => "pope",
            Scores::Chair(_) => "chair",
        }
    }
}

/// Column of a comparison table. Percent metrics are shown with one decimal,
/// the others with two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricColumn {
    pub key: &'static str,
    pub label: &'static str,
    pub percent: bool,
}

pub const POPE_COLUMNS: &[MetricColumn] = &[
    MetricColumn { key: "accuracy", label: "Acc. (%)", percent: true },
    MetricColumn { key: "f1", label: "F1", percent: false },
    MetricColumn { key: "yes_ratio", label: "Yes Ratio", percent: false },
];

pub const CHAIR_COLUMNS: &[MetricColumn] = &[
    MetricColumn { key: "chair_s", label: "CHAIRs (%)", percent: true },
    MetricColumn { key: "chair_i", label: "CHAIRi (%)", percent: true },
];

pub fn column(key: &str) -> Option<&'static MetricColumn> {
    POPE_COLUMNS.iter().chain(CHAIR_COLUMNS).find(|c| c.key == key)
}

/// Scores of one run, labelled by setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub setting: String,
    pub condition: Condition,
    pub instruction_mode: InstructionMode,
    pub model_name: String,
    pub config_digest: String,
    pub scores: Scores,
}

/// `condition`, or `condition+instruction` when an explicit instruction
/// accompanies an image that already carries the question.
pub fn setting_label(condition: Condition, mode: InstructionMode) -> String {
    match mode {
        InstructionMode::AnswerInImage => format!("{condition}+instruction"),
        _ => condition.to_string(),
    }
}

impl MetricReport {
    pub fn from_run(manifest: &RunManifest, scores: Scores) -> Self {
        let cfg = &manifest.config;
        Self {
            setting: setting_label(cfg.condition, cfg.instruction_mode),
            condition: cfg.condition,
            instruction_mode: cfg.instruction_mode,
            model_name: cfg.model_name.clone(),
            config_digest: manifest.config_digest.clone(),
            scores,
        }
    }

    pub fn columns(&self) -> &'static [MetricColumn] {
        match self.scores {
            Scores::Pope(_) => POPE_COLUMNS,
            Scores::Chair(_) => CHAIR_COLUMNS,
        }
    }

    /// Headline values in table units: rates marked `percent` are scaled by 100.
    pub fn headline(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match &self.scores {
            Scores::Pope(m) => vec![("accuracy", m.accuracy * 100.0), ("f1", m.f1), ("yes_ratio", m.yes_ratio)],
            Scores::Chair(m) => vec![("chair_s", m.chair_s * 100.0), ("chair_i", m.chair_i * 100.0)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<(), ReportError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| ReportError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Malformed(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline_setting: String,
    /// Column order.
    pub metrics: Vec<String>,
    pub rows: Vec<TableRow>,
    /// setting → metric → value minus the baseline's value.
    pub deltas: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ComparisonTable {
    pub fn empty(metrics: &[MetricColumn]) -> Self {
        Self {
            baseline_setting: String::new(),
            metrics: metrics.iter().map(|c| c.key.to_string()).collect(),
            rows: Vec::new(),
            deltas: BTreeMap::new(),
        }
    }

    /// Build from headline rows, computing deltas against `baseline`.
    pub fn from_rows(metrics: Vec<String>, rows: Vec<TableRow>, baseline: &str) -> Result<Self, ReportError> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.setting.as_str()) {
                return Err(ReportError::DuplicateSetting(r.setting.clone()));
            }
        }
        let base = rows
            .iter()
            .find(|r| r.setting == baseline)
            .ok_or_else(|| ReportError::MissingBaseline(baseline.to_string()))?
            .values
            .clone();
        let deltas = rows
            .iter()
            .map(|r| {
                let d = metrics
                    .iter()
                    .filter_map(|m| Some((m.clone(), r.values.get(m)? - base.get(m)?)))
                    .collect();
                (r.setting.clone(), d)
            })
            .collect();
        Ok(Self {
            baseline_setting: baseline.to_string(),
            metrics,
            rows,
            deltas,
        })
    }

    pub fn delta(&self, setting: &str, metric: &str) -> Option<f64> {
        self.deltas.get(setting)?.get(metric).copied()
    }

    pub fn value(&self, setting: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.setting == setting)?.values.get(metric).copied()
    }
}

/// Compare reports of one task against the `baseline` setting. Rows keep
/// the input order.
pub fn aggregate(reports: &[MetricReport], baseline: &str) -> Result<ComparisonTable, ReportError> {
    let Some(first) = reports.first() else {
        return Err(ReportError::MissingBaseline(baseline.to_string()));
    };
    if let Some(other) = reports.iter().find(|r| r.scores.task() != first.scores.task()) {
        return Err(ReportError::MixedTasks(first.scores.task(), other.scores.task()));
    }
    let metrics = first.columns().iter().map(|c| c.key.to_string()).collect();
    let rows = reports
        .iter()
        .map(|r| TableRow { setting: r.setting.clone(), values: r.headline() })
        .collect();
    ComparisonTable::from_rows(metrics, rows, baseline)
}

/// Serialize `rows` as CSV with a header line.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| ReportError::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> ReportError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ReportError::io(path, io),
        other => ReportError::Malformed(format!("{}: {other:?}", path.display())),
    }
}

/// Write `content` to `path`, creating parent directories.
pub fn write_text(path: &Path, content: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ReportError::io(parent, e))?;
    }
    std::fs::write(path, content).map_err(|e| ReportError::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::metrics::Confusion;

    pub fn pope(setting: &str, acc: f64, f1: f64, yes: f64) -> MetricReport {
        MetricReport {
            setting: setting.into(),
            condition: Condition::Baseline,
            instruction_mode: InstructionMode::PlainQuestion,
            model_name: "m".into(),
            config_digest: "d".into(),
            scores: Scores::Pope(PopeMetrics {
                accuracy: acc,
                precision: 0.0,
                recall: 0.0,
                f1,
                yes_ratio: yes,
                n_total: 0,
                n_abstain: 0,
                n_failed: 0,
                confusion: Confusion::default(),
                per_item: Vec::new(),
            }),
        }
    }

    pub fn chair(setting: &str, s: f64, i: f64) -> MetricReport {
        MetricReport {
            scores: Scores::Chair(ChairMetrics {
                chair_s: s,
                chair_i: i,
                n_captions: 0,
                n_no_mention: 0,
                n_failed: 0,
                total_mentioned: 0,
                total_hallucinated: 0,
                per_caption: Vec::new(),
            }),
            ..pope(setting, 0.0, 0.0, 0.0)
        }
    }

    #[test]
    fn pope_accuracy_delta() {
        let t = aggregate(&[pope("baseline", 0.802, 0.76, 0.32), pope("pii", 0.843, 0.82, 0.38)], "baseline").unwrap();
        assert_eq!(format_delta(t.delta("pii", "accuracy").unwrap(), true), "+4.1");
        assert_eq!(t.delta("baseline", "accuracy"), Some(0.0));
    }

    #[test]
    fn chair_sentence_delta() {
        let t = aggregate(&[chair("baseline", 0.323, 0.088), chair("pii", 0.247, 0.067)], "baseline").unwrap();
        assert_eq!(format_delta(t.delta("pii", "chair_s").unwrap(), true), "-7.6");
        assert_eq!(format_delta(t.delta("pii", "chair_i").unwrap(), true), "-2.1");
    }

    #[test]
    fn single_baseline_has_zero_deltas() {
        let t = aggregate(&[pope("baseline", 0.5, 0.5, 0.5)], "baseline").unwrap();
        assert!(t.deltas["baseline"].values().all(|&d| d == 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            aggregate(&[pope("pii", 0.5, 0.5, 0.5)], "baseline"),
            Err(ReportError::MissingBaseline(_))
        ));
        assert!(matches!(
            aggregate(&[pope("baseline", 0.5, 0.5, 0.5), chair("pii", 0.1, 0.1)], "baseline"),
            Err(ReportError::MixedTasks(..))
        ));
        assert!(matches!(
            aggregate(&[pope("baseline", 0.5, 0.5, 0.5), pope("baseline", 0.5, 0.5, 0.5)], "baseline"),
            Err(ReportError::DuplicateSetting(_))
        ));
    }

    #[test]
    fn setting_labels() {
        assert_eq!(setting_label(Condition::PromptInImage, InstructionMode::None), "pii");
        assert_eq!(setting_label(Condition::PromptInImage, InstructionMode::AnswerInImage), "pii+instruction");
        assert_eq!(setting_label(Condition::Hybrid, InstructionMode::PlainQuestion), "hybrid");
    }

    #[test]
    fn report_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let r = chair("baseline", 0.25, 0.1);
        r.write_json(&p).unwrap();
        assert_eq!(MetricReport::read_json(&p).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["scores"]["task"], "chair");
    }
}
