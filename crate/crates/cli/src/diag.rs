use anyhow::{bail, Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

use pii_core::conditioner::Condition;
use pii_core::diagnostics::{self, TokenRole};
use pii_core::report::{self, HeatmapPanel, LinePlot, ScatterPlot, Series};
use pii_core::tensor_io::{self, Expectation, TensorDump};

use crate::UsageError;

fn load_all(dir: &Path) -> Result<Vec<TensorDump>> {
    let paths = tensor_io::list_dumps(dir)?;
    if paths.is_empty() {
        bail!(tensor_io::TensorIoError::Invalid(format!("no .piid files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| tensor_io::read_dump(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn vision_dumps(dir: &Path) -> Result<Vec<TensorDump>> {
    let dumps: Vec<_> = load_all(dir)?.into_iter().filter(|d| d.array("attn").is_some()).collect();
    if dumps.is_empty() {
        bail!(tensor_io::TensorIoError::Invalid(format!("no attention dumps in {}", dir.display())));
    }
    for d in &dumps {
        tensor_io::validate_schema(d, Expectation::VisionAttention)
            .with_context(|| format!("dump {}", d.header.sample_id))?;
    }
    Ok(dumps)
}

fn decoder_dumps(dir: &Path) -> Result<Vec<TensorDump>> {
    let dumps: Vec<_> = load_all(dir)?
        .into_iter()
        .filter(|d| d.array("hidden").is_some_and(|h| h.dims.len() == 2))
        .collect();
    if dumps.is_empty() {
        bail!(tensor_io::TensorIoError::Invalid(format!("no decoder hidden-state dumps in {}", dir.display())));
    }
    for d in &dumps {
        tensor_io::validate_schema(d, Expectation::DecoderHidden)
            .with_context(|| format!("dump {}", d.header.sample_id))?;
    }
    Ok(dumps)
}

fn layer_count(dump: &TensorDump, array: &str) -> usize {
    dump.array(array).map_or(0, |a| a.dims[0])
}

fn resolve_layers(requested: Option<&[usize]>, available: usize) -> Result<Vec<usize>> {
    match requested {
        None => Ok((1..=available).collect()),
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l == 0 || l > available) {
                bail!(UsageError(format!("layer {bad} out of range 1..={available}")));
            }
            Ok(ls.to_vec())
        }
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

#[derive(Serialize)]
struct AttnRow<'a> {
    sample_id: &'a str,
    layer: usize,
    row: usize,
    col: usize,
    received: f64,
}

pub fn attn(dir: &Path, layers: Option<&[usize]>, out: &Path) -> Result<()> {
    let dumps = vision_dumps(dir)?;
    prepare_out(out)?;
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    for d in &dumps {
        let layers = resolve_layers(layers, layer_count(d, "attn"))?;
        let per_dump: Vec<_> = layers
            .iter()
            .map(|&l| diagnostics::attention_received(d, l))
            .collect::<Result<_, _>>()?;
        grids.push((d.header.sample_id.as_str(), per_dump));
    }
    for (sample_id, per_dump) in &grids {
        for g in per_dump {
            for r in 0..g.rows {
                for c in 0..g.cols {
                    rows.push(AttnRow { sample_id, layer: g.layer, row: r, col: c, received: g.get(r, c) });
                }
            }
        }
        let panels: Vec<_> = per_dump
            .iter()
            .map(|g| HeatmapPanel {
                title: format!("layer {}", g.layer),
                rows: g.rows,
                cols: g.cols,
                values: g.values.clone(),
            })
            .collect();
        let svg = report::heatmap_grid(&format!("Attention received: {sample_id}"), &panels);
        report::write_text(&out.join(format!("attn_{}.svg", file_safe(sample_id))), &svg)?;
    }
    report::write_csv_rows(&out.join("attn.csv"), &rows)?;
    println!("{} dump(s) -> {}", dumps.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct BiasRow<'a> {
    sample_id: &'a str,
    layer: usize,
    text_diag_mean: f64,
    nontext_diag_mean: f64,
    bias_ratio: f64,
    n_text_patches: usize,
}

#[derive(Serialize)]
struct DiagRow<'a> {
    sample_id: &'a str,
    layer: usize,
    patch: usize,
    self_attention: f64,
}

pub fn bias(dir: &Path, layers: Option<&[usize]>, out: &Path) -> Result<()> {
    let dumps: Vec<_> = vision_dumps(dir)?
        .into_iter()
        .filter(|d| {
            let has = d.span(tensor_io::SpanLabel::TextRegionPatches).is_some();
            if !has {
                tracing::warn!(sample = %d.header.sample_id, "no text region; skipped");
            }
            has
        })
        .collect();
    if dumps.is_empty() {
        bail!(tensor_io::TensorIoError::Invalid("no dump carries a TextRegionPatches span".into()));
    }
    prepare_out(out)?;
    let reports = dumps
        .iter()
        .map(|d| {
            let ls = resolve_layers(layers, layer_count(d, "attn"))?;
            Ok(diagnostics::bias_report(d, &ls)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bias_rows = Vec::new();
    let mut diag_rows = Vec::new();
    let mut curves: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for r in &reports {
        for b in &r.per_layer {
            bias_rows.push(BiasRow {
                sample_id: &r.sample_id,
                layer: b.layer,
                text_diag_mean: b.text_diag_mean,
                nontext_diag_mean: b.nontext_diag_mean,
                bias_ratio: b.bias_ratio,
                n_text_patches: r.n_text_patches,
            });
        }
        for (layer, curve) in &r.per_patch_diag {
            for (p, &v) in curve.iter().enumerate() {
                diag_rows.push(DiagRow { sample_id: &r.sample_id, layer: *layer, patch: p, self_attention: v });
            }
            curves.entry(*layer).or_default().push(curve.clone());
        }
    }
    report::write_csv_rows(&out.join("bias.csv"), &bias_rows)?;
    report::write_csv_rows(&out.join("diagonal.csv"), &diag_rows)?;

    let n_patches = reports[0].per_patch_diag.first().map_or(0, |(_, c)| c.len());
    let text = reports[0].n_text_patches;
    let highlight = reports
        .iter()
        .all(|r| r.n_text_patches == text && r.per_patch_diag.first().map_or(0, |(_, c)| c.len()) == n_patches)
        .then(|| ((n_patches - text) as f64 - 0.5, n_patches as f64 - 0.5));
    for (layer, traces) in curves {
        let len = traces.iter().map(Vec::len).max().unwrap_or(0);
        let mean = diagnostics::mean_curve(&traces).ok();
        if mean.is_none() {
            tracing::warn!(layer, "patch counts differ across samples; mean trace omitted");
        }
        let svg = report::line_plot(&LinePlot {
            title: format!("Self-attention diagonal, layer {layer}"),
            x_label: "patch index".into(),
            y_label: "self-attention".into(),
            x: (0..len).map(|i| i as f64).collect(),
            traces,
            mean,
            highlight,
            highlight_label: highlight.map(|_| "text region".into()),
        });
        report::write_text(&out.join(format!("bias_layer{layer}.svg")), &svg)?;
    }
    println!("{} dump(s) -> {}", reports.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SimRow<'a> {
    sample_id: &'a str,
    layer: usize,
    mean_cosine: f64,
}

/// Pairs each conditioned dump (prompt-in-image or hybrid) with the control
/// dump of the same sample id.
pub fn sim(dir: &Path, layers: Option<&[usize]>, out: &Path) -> Result<()> {
    let dumps: Vec<_> = load_all(dir)?
        .into_iter()
        .filter(|d| d.array("hidden").is_some_and(|h| h.dims.len() == 3))
        .collect();
    let mut controls = BTreeMap::new();
    let mut conditioned = Vec::new();
    for d in &dumps {
        match d.header.condition {
            Some(Condition::Control) => {
                controls.insert(d.header.sample_id.clone(), d);
            }
            Some(c) if c.has_embedded_text() => conditioned.push(d),
            _ => tracing::warn!(sample = %d.header.sample_id, "neither conditioned nor control; skipped"),
        }
    }
    let pairs: Vec<_> = conditioned
        .into_iter()
        .filter_map(|a| match controls.get(&a.header.sample_id) {
            Some(b) => Some((a, *b)),
            None => {
                tracing::warn!(sample = %a.header.sample_id, "no control dump; skipped");
                None
            }
        })
        .collect();
    if pairs.is_empty() {
        bail!(tensor_io::TensorIoError::Invalid(format!(
            "no conditioned/control pairs with hidden[L,T,D] in {}",
            dir.display()
        )));
    }
    prepare_out(out)?;
    let profiles = pairs
        .iter()
        .map(|(a, b)| {
            let ls = resolve_layers(layers, layer_count(a, "hidden"))?;
            diagnostics::layerwise_similarity(a, b, &ls).with_context(|| format!("sample {}", a.header.sample_id))
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<_> = profiles
        .iter()
        .flat_map(|p| p.per_layer.iter().map(|&(layer, v)| SimRow { sample_id: &p.sample_id, layer, mean_cosine: v }))
        .collect();
    report::write_csv_rows(&out.join("similarity.csv"), &rows)?;

    let traces: Vec<_> = profiles.iter().map(|p| p.values()).collect();
    let svg = report::line_plot(&LinePlot {
        title: "Layer-wise similarity, conditioned vs control".into(),
        x_label: "layer".into(),
        y_label: "mean cosine similarity".into(),
        x: profiles[0].layers_analyzed.iter().map(|&l| l as f64).collect(),
        mean: diagnostics::mean_curve(&traces).ok(),
        traces,
        ..Default::default()
    });
    report::write_text(&out.join("similarity.svg"), &svg)?;
    println!("{} pair(s) -> {}", profiles.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct GapRow<'a> {
    sample_id: &'a str,
    condition: String,
    mean_pairwise_distance: f64,
    centroid_distance: f64,
}

#[derive(Serialize)]
struct GapSummaryRow {
    condition: String,
    n: usize,
    group_mean: f64,
    centroid_mean: f64,
}

fn condition_name(d: &TensorDump) -> String {
    d.header.condition.map_or_else(|| "unknown".to_string(), |c| c.to_string())
}

pub fn gap(dir: &Path, out: &Path) -> Result<()> {
    let dumps = decoder_dumps(dir)?;
    prepare_out(out)?;
    let mut rows = Vec::new();
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for d in &dumps {
        let g = diagnostics::modality_gap(d).with_context(|| format!("sample {}", d.header.sample_id))?;
        groups
            .entry(condition_name(d))
            .or_default()
            .push((g.mean_pairwise_distance, g.centroid_distance));
        rows.push(GapRow {
            sample_id: &d.header.sample_id,
            condition: condition_name(d),
            mean_pairwise_distance: g.mean_pairwise_distance,
            centroid_distance: g.centroid_distance,
        });
    }
    report::write_csv_rows(&out.join("gap.csv"), &rows)?;
    let summary: Vec<_> = groups
        .into_iter()
        .map(|(condition, v)| GapSummaryRow {
            condition,
            n: v.len(),
            group_mean: v.iter().map(|p| p.0).sum::<f64>() / v.len() as f64,
            centroid_mean: v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64,
        })
        .collect();
    report::write_csv_rows(&out.join("gap_summary.csv"), &summary)?;
    for s in &summary {
        println!("{}: n={} mean pairwise distance {:.4}", s.condition, s.n, s.group_mean);
    }
    Ok(())
}

#[derive(Serialize)]
struct PcaRow<'a> {
    sample_id: &'a str,
    role: TokenRole,
    x: f64,
    y: f64,
}

pub fn pca(dir: &Path, out: &Path) -> Result<()> {
    let dumps = decoder_dumps(dir)?;
    prepare_out(out)?;
    let mut rows = Vec::new();
    for d in &dumps {
        let points = diagnostics::pca_project(d).with_context(|| format!("sample {}", d.header.sample_id))?;
        let series = |role, label: &str, color: &str| Series {
            label: label.into(),
            color: color.into(),
            points: points.iter().filter(|p| p.role == role).map(|p| (p.x, p.y)).collect(),
        };
        let svg = report::scatter_plot(&ScatterPlot {
            title: format!("PCA of final-layer embeddings: {}", d.header.sample_id),
            x_label: "PC1".into(),
            y_label: "PC2".into(),
            series: vec![
                series(TokenRole::Image, "image tokens", "#1f77b4"),
                series(TokenRole::Text, "text tokens", "#8e44ad"),
            ],
        });
        report::write_text(&out.join(format!("pca_{}.svg", file_safe(&d.header.sample_id))), &svg)?;
        rows.extend(points.into_iter().map(|p| (d.header.sample_id.as_str(), p)));
    }
    let rows: Vec<_> = rows
        .iter()
        .map(|(s, p)| PcaRow { sample_id: s, role: p.role, x: p.x, y: p.y })
        .collect();
    report::write_csv_rows(&out.join("pca.csv"), &rows)?;
    println!("{} dump(s) -> {}", dumps.len(), out.display());
    Ok(())
}
