use std::collections::BTreeMap;
use std::path::Path;

use super::{column, ComparisonTable, ReportError, TableRow};

fn decimals(percent: bool) -> usize {
    if percent {
        1
    } else {
        2
    }
}

pub fn format_value(v: f64, percent: bool) -> String {
    format!("{v:.*}", decimals(percent))
}

/// Signed delta at table precision; deltas that round to zero print as `±0`
/// followed by the precision's zeros.
pub fn format_delta(d: f64, percent: bool) -> String {
    let p = decimals(percent);
    let s = format!("{d:+.p$}");
    if s[1..].chars().all(|c| c == '0' || c == '.') {
        format!("±{}", &s[1..])
    } else {
        s
    }
}

fn is_percent(metric: &str) -> bool {
    column(metric).is_some_and(|c| c.percent)
}

/// RFC-4180 CSV: `setting,baseline,<metric>,<metric>_delta,...`, string
/// fields quoted, LF line endings. Values are written at full precision so
/// the table re-parses exactly.
pub fn table_to_csv(table: &ComparisonTable) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(Vec::new());
    let mut header = vec!["setting".to_string(), "baseline".to_string()];
    for m in &table.metrics {
        header.push(m.clone());
        header.push(format!("{m}_delta"));
    }
    w.write_record(&header).expect("in-memory write");
    for row in &table.rows {
        let mut rec = vec![row.setting.clone(), (row.setting == table.baseline_setting).to_string()];
        for m in &table.metrics {
            rec.push(row.values.get(m).map(|v| v.to_string()).unwrap_or_default());
            rec.push(table.delta(&row.setting, m).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

pub fn table_from_csv(text: &str) -> Result<ComparisonTable, ReportError> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let bad = |m: String| ReportError::Malformed(m);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || header[0] != "setting" || header[1] != "baseline" || header.len() % 2 != 0 {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let metrics: Vec<String> = header[2..].iter().step_by(2).cloned().collect();
    for (m, d) in metrics.iter().zip(header[3..].iter().step_by(2)) {
        if *d != format!("{m}_delta") {
            return Err(bad(format!("column {d} should be {m}_delta")));
        }
    }

    let parse = |s: &str, line: usize| -> Result<Option<f64>, ReportError> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| bad(format!("line {line}: {s:?} is not a number")))
    };
    let mut table = ComparisonTable {
        baseline_setting: String::new(),
        metrics: metrics.clone(),
        rows: Vec::new(),
        deltas: BTreeMap::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let setting = rec[0].to_string();
        match &rec[1] {
            "true" => table.baseline_setting = setting.clone(),
            "false" => {}
            other => return Err(bad(format!("line {line}: baseline flag {other:?}"))),
        }
        let mut values = BTreeMap::new();
        let mut deltas = BTreeMap::new();
        for (k, m) in metrics.iter().enumerate() {
            if let Some(v) = parse(&rec[2 + 2 * k], line)? {
                values.insert(m.clone(), v);
            }
            if let Some(d) = parse(&rec[3 + 2 * k], line)? {
                deltas.insert(m.clone(), d);
            }
        }
        table.deltas.insert(setting.clone(), deltas);
        table.rows.push(TableRow { setting, values });
    }
    Ok(table)
}

pub fn write_table_csv(table: &ComparisonTable, path: &Path) -> Result<(), ReportError> {
    super::write_text(path, &table_to_csv(table))
}

pub fn read_table_csv(path: &Path) -> Result<ComparisonTable, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
    table_from_csv(&text).map_err(|e| match e {
        ReportError::Malformed(m) => ReportError::Malformed(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Markdown table with the baseline in bold and every other row annotated
/// with its delta, e.g. `84.3 (+4.1)`.
pub fn table_to_markdown(table: &ComparisonTable) -> String {
    let mut out = String::from("| Setting |");
    for m in &table.metrics {
        out.push_str(&format!(" {} |", column(m).map_or(m.as_str(), |c| c.label)));
    }
    out.push_str("\n| :--- |");
    for _ in &table.metrics {
        out.push_str(" ---: |");
    }
    out.push('\n');
    for row in &table.rows {
        let is_base = row.setting == table.baseline_setting;
        if is_base {
            out.push_str(&format!("| **{}** |", row.setting));
        } else {
            out.push_str(&format!("| {} |", row.setting));
        }
        for m in &table.metrics {
            let pct = is_percent(m);
            let cell = match (row.values.get(m), table.delta(&row.setting, m)) {
                (None, _) => "--".to_string(),
                (Some(&v), Some(d)) if !is_base => format!("{} ({})", format_value(v, pct), format_delta(d, pct)),
                (Some(&v), _) => format_value(v, pct),
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}
