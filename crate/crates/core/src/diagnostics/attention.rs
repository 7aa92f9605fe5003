use serde::{Deserialize, Serialize};

use super::{check_layer, is_cls, require, DiagError};
use crate::tensor_io::{SpanLabel, TensorDump, TokenSpan};

/// Attention received per patch, laid out on the encoder's patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionGrid {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` values.
    pub values: Vec<f64>,
    /// Attention received by class tokens, which are not on the grid.
    pub cls_received: f64,
}

impl AttentionGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

fn attn_dims(dump: &TensorDump) -> Result<(usize, usize, usize), DiagError> {
    let attn = require(dump, "attn")?;
    match attn.dims.as_slice() {
        &[l, h, t, t2] if t == t2 => Ok((l, h, t)),
        other => Err(DiagError::ShapeMismatch(format!("attn must be [L,H,T,T], got {other:?}"))),
    }
}

/// Mean over heads and all query positions of the attention each key token
/// receives at `layer`, reshaped to the header's patch grid (a single row
/// when the dump records no grid).
pub fn attention_received(dump: &TensorDump, layer: usize) -> Result<AttentionGrid, DiagError> {
    let (layers, heads, t) = attn_dims(dump)?;
    let l = check_layer(layer, layers)?;
    let attn = require(dump, "attn")?;

    let mut received = vec![0.0f64; t];
    for h in 0..heads {
        for q in 0..t {
            for (k, &v) in attn.row(&[l, h, q]).iter().enumerate() {
                received[k] += v as f64;
            }
        }
    }
    let norm = (heads * t) as f64;

    let mut values = Vec::with_capacity(t);
    let mut cls_received = 0.0;
    for (k, r) in received.into_iter().enumerate() {
        if is_cls(dump, k) {
            cls_received += r / norm;
        } else {
            values.push(r / norm);
        }
    }
    let (rows, cols) = dump.header.patch_grid.unwrap_or((1, values.len()));
    if rows * cols != values.len() {
        return Err(DiagError::ShapeMismatch(format!(
            "patch grid {rows}x{cols} does not match {} non-class tokens",
            values.len()
        )));
    }
    Ok(AttentionGrid { layer, rows, cols, values, cls_received })
}

/// Head-averaged self-attention `attn[layer, h, i, i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagonal {
    pub layer: usize,
    /// Every token in sequence order, class tokens included.
    pub values: Vec<f64>,
    /// Indices of class tokens within `values`.
    pub cls_indices: Vec<usize>,
}

impl Diagonal {
    pub fn cls_values(&self) -> Vec<f64> {
        self.cls_indices.iter().map(|&i| self.values[i]).collect()
    }

    /// Values at patch positions only, with `span` (in token indices)
    /// re-expressed in the coordinates of the returned vector.
    pub fn patches_with_span(&self, span: &TokenSpan) -> (Vec<f64>, TokenSpan) {
        let keep: Vec<usize> = (0..self.values.len()).filter(|i| !self.cls_indices.contains(i)).collect();
        let shift = |i: usize| keep.iter().take_while(|&&k| k < i).count();
        let mapped = TokenSpan::new(span.label, shift(span.start), shift(span.end));
        (keep.iter().map(|&i| self.values[i]).collect(), mapped)
    }
}

pub fn self_attention_diagonal(dump: &TensorDump, layer: usize) -> Result<Diagonal, DiagError> {
    let (layers, heads, t) = attn_dims(dump)?;
    let l = check_layer(layer, layers)?;
    let attn = require(dump, "attn")?;
    let values = (0..t)
        .map(|i| (0..heads).map(|h| attn.get(&[l, h, i, i]) as f64).sum::<f64>() / heads as f64)
        .collect();
    let cls_indices = (0..t).filter(|&i| is_cls(dump, i)).collect();
    Ok(Diagonal { layer, values, cls_indices })
}

/// `(text_mean, nontext_mean, text_mean / nontext_mean)` over the indices
/// inside and outside `text_span`.
pub fn text_bias_ratio(diag: &[f64], text_span: &TokenSpan) -> Result<(f64, f64, f64), DiagError> {
    if text_span.is_empty() || text_span.end > diag.len() {
        return Err(DiagError::DegenerateSpan(format!(
            "text span [{}, {}) invalid for a diagonal of length {}",
            text_span.start,
            text_span.end,
            diag.len()
        )));
    }
    let n_text = text_span.len();
    let n_other = diag.len() - n_text;
    if n_other == 0 {
        return Err(DiagError::DegenerateSpan("text span covers every token".into()));
    }
    let text: f64 = diag[text_span.indices()].iter().sum();
    let other: f64 = diag.iter().sum::<f64>() - text;
    let text_mean = text / n_text as f64;
    let nontext_mean = other / n_other as f64;
    if nontext_mean <= 0.0 {
        return Err(DiagError::DegenerateSpan("non-text diagonal mean is zero".into()));
    }
    Ok((text_mean, nontext_mean, text_mean / nontext_mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBias {
    pub layer: usize,
    pub text_diag_mean: f64,
    pub nontext_diag_mean: f64,
    pub bias_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub sample_id: String,
    pub per_layer: Vec<LayerBias>,
    /// Patch-only diagonal (class tokens removed) for each analyzed layer.
    pub per_patch_diag: Vec<(usize, Vec<f64>)>,
    pub n_text_patches: usize,
}

/// Text-region bias for each of `layers`. The text region is the dump's
/// TextRegionPatches span; class tokens are excluded from both means.
pub fn bias_report(dump: &TensorDump, layers: &[usize]) -> Result<BiasReport, DiagError> {
    let span = *dump.span(SpanLabel::TextRegionPatches).ok_or_else(|| {
        DiagError::DegenerateSpan(format!("dump {} has no TextRegionPatches span", dump.header.sample_id))
    })?;
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut per_patch_diag = Vec::with_capacity(layers.len());
    for &layer in layers {
        let diag = self_attention_diagonal(dump, layer)?;
        let (patches, mapped) = diag.patches_with_span(&span);
        let (text_diag_mean, nontext_diag_mean, bias_ratio) = text_bias_ratio(&patches, &mapped)?;
        per_layer.push(LayerBias { layer, text_diag_mean, nontext_diag_mean, bias_ratio });
        per_patch_diag.push((layer, patches));
    }
    Ok(BiasReport {
        sample_id: dump.header.sample_id.clone(),
        per_layer,
        per_patch_diag,
        n_text_patches: span.len(),
    })
}

/// Element-wise mean of equal-length traces.
pub fn mean_curve(traces: &[Vec<f64>]) -> Result<Vec<f64>, DiagError> {
    let Some(first) = traces.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = traces.iter().find(|t| t.len() != first.len()) {
        return Err(DiagError::ShapeMismatch(format!(
            "traces of length {} and {} cannot be averaged",
            first.len(),
            bad.len()
        )));
    }
    let n = traces.len() as f64;
    Ok((0..first.len()).map(|i| traces.iter().map(|t| t[i]).sum::<f64>() / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{Array, DumpHeader};

    /// One Cls token followed by a `rows x cols` patch grid; `f(h, q, k)`
    /// fills the attention matrix of every layer.
    pub(crate) fn vision_dump(
        layers: usize,
        heads: usize,
        grid: (usize, usize),
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> TensorDump {
        let t = 1 + grid.0 * grid.1;
        let mut a = Array::zeros(vec![layers, heads, t, t]);
        for l in 0..layers {
            for h in 0..heads {
                for q in 0..t {
                    for k in 0..t {
                        a.set(&[l, h, q, k], f(h, q, k));
                    }
                }
            }
        }
        let mut header = DumpHeader::new("synthetic", "s");
        header.patch_grid = Some(grid);
        header.spans.push(TokenSpan::new(SpanLabel::Cls, 0, 1));
        TensorDump::new(header).with_array("attn", a)
    }

    #[test]
    fn uniform_attention_received_everywhere() {
        let d = vision_dump(2, 3, (4, 4), |_, _, _| 1.0 / 17.0);
        let g = attention_received(&d, 2).unwrap();
        assert_eq!((g.rows, g.cols), (4, 4));
        for v in &g.values {
            assert!((v - 1.0 / 17.0).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_rows_concentrate_on_patch() {
        // token 6 is patch 5 once the leading class token is skipped
        let d = vision_dump(1, 2, (3, 3), |_, _, k| if k == 6 { 1.0 } else { 0.0 });
        let g = attention_received(&d, 1).unwrap();
        for (p, v) in g.values.iter().enumerate() {
            assert_eq!(*v, if p == 5 { 1.0 } else { 0.0 });
        }
        assert_eq!(g.get(1, 2), 1.0);
        assert_eq!(g.cls_received, 0.0);
    }

    #[test]
    fn received_mass_sums_to_one() {
        let d = vision_dump(1, 2, (2, 3), |h, q, k| {
            let w = |k: usize| 1.0 + ((h * 7 + q * 3 + k) % 5) as f32;
            w(k) / (0..7).map(w).sum::<f32>()
        });
        let g = attention_received(&d, 1).unwrap();
        let total: f64 = g.values.iter().sum::<f64>() + g.cls_received;
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn probe_layers_give_three_grids() {
        let d = vision_dump(24, 1, (2, 2), |_, _, _| 0.2);
        let grids: Vec<_> = [4, 12, 24].iter().map(|&l| attention_received(&d, l).unwrap()).collect();
        assert_eq!(grids.len(), 3);
        assert!(matches!(
            attention_received(&d, 25),
            Err(DiagError::LayerOutOfRange { layer: 25, available: 24 })
        ));
    }

    #[test]
    fn identity_and_uniform_diagonals() {
        let d = vision_dump(1, 2, (2, 2), |_, q, k| if q == k { 1.0 } else { 0.0 });
        assert!(self_attention_diagonal(&d, 1).unwrap().values.iter().all(|&v| v == 1.0));
        let d = vision_dump(1, 2, (2, 2), |_, _, _| 0.2);
        let diag = self_attention_diagonal(&d, 1).unwrap();
        assert!(diag.values.iter().all(|&v| (v - 0.2).abs() < 1e-7));
        assert_eq!(diag.cls_indices, vec![0]);
    }

    #[test]
    fn planted_step_gives_ratio_five() {
        // 6x6 grid, the last 8 patches are text
        let t = 37;
        let text = 29..37;
        let d = vision_dump(1, 4, (6, 6), |_, q, k| {
            let diag = if text.contains(&q) { 0.5 } else { 0.1 };
            if q == k {
                diag
            } else {
                (1.0 - diag) / (t - 1) as f32
            }
        });
        let mut d = d;
        d.header.spans.push(TokenSpan::new(SpanLabel::TextRegionPatches, 29, 37));
        let r = bias_report(&d, &[1]).unwrap();
        let b = &r.per_layer[0];
        assert!((b.bias_ratio - 5.0).abs() < 1e-6, "{b:?}");
        assert_eq!(r.n_text_patches, 8);
        let curve = &r.per_patch_diag[0].1;
        assert_eq!(curve.len(), 36);
        assert!((curve[27] - 0.1).abs() < 1e-7 && (curve[28] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn uniform_diagonal_ratio_is_one_and_degenerate_cases() {
        let diag = vec![0.3; 10];
        let (_, _, r) = text_bias_ratio(&diag, &TokenSpan::new(SpanLabel::TextRegionPatches, 7, 10)).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(text_bias_ratio(&diag, &TokenSpan::new(SpanLabel::TextRegionPatches, 0, 10)).is_err());
        let zeros = vec![0.0, 0.0, 1.0];
        assert!(text_bias_ratio(&zeros, &TokenSpan::new(SpanLabel::TextRegionPatches, 2, 3)).is_err());
    }

    #[test]
    fn mean_curve_checks_lengths() {
        let m = mean_curve(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m, vec![2.0, 3.0]);
        assert!(mean_curve(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
