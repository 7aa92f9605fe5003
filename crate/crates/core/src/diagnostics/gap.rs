use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::fmt;

use super::{cosine, require, DiagError};
use crate::tensor_io::{SpanLabel, TensorDump, TokenSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    Image,
    Text,
}

impl fmt::Display for TokenRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenRole::Image => "image",
            TokenRole::Text => "text",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// Mean over all (image, text) token pairs of `1 - cosine`.
    pub mean_pairwise_distance: f64,
    /// `1 - cosine` between the image-token and text-token centroids.
    pub centroid_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub sample_id: String,
    pub role: TokenRole,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `(sample_id, mean pairwise cosine distance)`.
    pub per_sample: Vec<(String, f64)>,
    pub centroid_distances: Vec<(String, f64)>,
    pub group_mean: f64,
    pub pca_points: Vec<PcaPoint>,
}

fn decoder_tokens(dump: &TensorDump) -> Result<(&crate::tensor_io::Array, TokenSpan, TokenSpan), DiagError> {
    let hidden = require(dump, "hidden")?;
    if hidden.dims.len() != 2 {
        return Err(DiagError::ShapeMismatch(format!("hidden must be [T,D], got {:?}", hidden.dims)));
    }
    let span = |label| {
        dump.span(label)
            .copied()
            .filter(|s| !s.is_empty() && s.end <= hidden.dims[0])
            .ok_or_else(|| DiagError::DegenerateSpan(format!("dump {} lacks a usable {label:?} span", dump.header.sample_id)))
    };
    Ok((hidden, span(SpanLabel::ImageTokens)?, span(SpanLabel::TextTokens)?))
}

fn unit_mean(hidden: &crate::tensor_io::Array, span: &TokenSpan) -> Vec<f64> {
    let d = hidden.dims[1];
    let mut acc = vec![0.0f64; d];
    for i in span.indices() {
        let row = hidden.row(&[i]);
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64 / norm;
            }
        }
    }
    let n = span.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn centroid(hidden: &crate::tensor_io::Array, span: &TokenSpan) -> Vec<f32> {
    let d = hidden.dims[1];
    let mut acc = vec![0.0f64; d];
    for i in span.indices() {
        for (a, &v) in acc.iter_mut().zip(hidden.row(&[i])) {
            *a += v as f64;
        }
    }
    acc.iter().map(|a| (a / span.len() as f64) as f32).collect()
}

/// Image/text separation in the final decoder layer's `hidden[T,D]`.
///
/// The pairwise mean equals `1 - mean_unit(image) . mean_unit(text)` (zero
/// vectors have cosine 0 with everything), so it runs in `O((n + m) D)`.
pub fn modality_gap(dump: &TensorDump) -> Result<GapStats, DiagError> {
    let (hidden, image, text) = decoder_tokens(dump)?;
    let ui = unit_mean(hidden, &image);
    let ut = unit_mean(hidden, &text);
    let mean_cos: f64 = ui.iter().zip(&ut).map(|(a, b)| a * b).sum();
    let centroid_cos = cosine(&centroid(hidden, &image), &centroid(hidden, &text));
    Ok(GapStats {
        mean_pairwise_distance: (1.0 - mean_cos).clamp(0.0, 2.0),
        centroid_distance: (1.0 - centroid_cos).clamp(0.0, 2.0),
    })
}

/// Project the pooled image and text tokens onto their top two principal
/// components. Each component's sign is fixed so that its largest-magnitude
/// loading is positive. Image tokens come first in the output.
pub fn pca_project(dump: &TensorDump) -> Result<Vec<PcaPoint>, DiagError> {
    let (hidden, image, text) = decoder_tokens(dump)?;
    let tokens: Vec<(usize, TokenRole)> = image
        .indices()
        .map(|i| (i, TokenRole::Image))
        .chain(text.indices().map(|i| (i, TokenRole::Text)))
        .collect();
    if tokens.len() < 3 {
        return Err(DiagError::DegenerateSpan(format!("PCA needs at least 3 tokens, got {}", tokens.len())));
    }
    let d = hidden.dims[1];
    let x = DMatrix::from_fn(tokens.len(), d, |r, c| hidden.row(&[tokens[r].0])[c] as f64);
    let coords = principal_coordinates(&x, 2);
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(r, &(_, role))| PcaPoint {
            sample_id: dump.header.sample_id.clone(),
            role,
            x: coords[(r, 0)],
            y: coords[(r, 1)],
        })
        .collect())
}

/// Scores of the mean-centred rows of `x` on the top `k` principal axes.
fn principal_coordinates(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mean = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }
    let mut scores = DMatrix::zeros(n, k);

    if n < d {
        let eig = SymmetricEigen::new(&xc * xc.transpose());
        for (c, idx) in top_indices(&eig.eigenvalues, k).into_iter().enumerate() {
            let lambda = eig.eigenvalues[idx];
            if lambda <= f64::EPSILON * n as f64 {
                continue;
            }
            let u = eig.eigenvectors.column(idx);
            let loading: DVector<f64> = xc.transpose() * u / lambda.sqrt();
            let sign = loading_sign(&loading);
            for r in 0..n {
                scores[(r, c)] = sign * u[r] * lambda.sqrt();
            }
        }
    } else {
        let eig = SymmetricEigen::new(xc.transpose() * &xc);
        for (c, idx) in top_indices(&eig.eigenvalues, k).into_iter().enumerate() {
            let v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
            let sign = loading_sign(&v);
            let s = &xc * v;
            for r in 0..n {
                scores[(r, c)] = sign * s[r];
            }
        }
    }
    scores
}

fn top_indices(values: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn loading_sign(v: &DVector<f64>) -> f64 {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Gap statistics and PCA points for a group of decoder dumps.
pub fn gap_report(dumps: &[TensorDump]) -> Result<GapReport, DiagError> {
    let mut per_sample = Vec::with_capacity(dumps.len());
    let mut centroid_distances = Vec::with_capacity(dumps.len());
    let mut pca_points = Vec::new();
    for dump in dumps {
        let stats = modality_gap(dump)?;
        per_sample.push((dump.header.sample_id.clone(), stats.mean_pairwise_distance));
        centroid_distances.push((dump.header.sample_id.clone(), stats.centroid_distance));
        pca_points.extend(pca_project(dump)?);
    }
    let group_mean = if per_sample.is_empty() {
        0.0
    } else {
        per_sample.iter().map(|(_, v)| v).sum::<f64>() / per_sample.len() as f64
    };
    Ok(GapReport { per_sample, centroid_distances, group_mean, pca_points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{Array, DumpHeader};

    fn decoder_dump(rows: &[Vec<f32>], n_image: usize) -> TensorDump {
        let d = rows[0].len();
        let data = rows.iter().flatten().copied().collect();
        let mut h = DumpHeader::new("synthetic", "g");
        h.spans.push(TokenSpan::new(SpanLabel::ImageTokens, 0, n_image));
        h.spans.push(TokenSpan::new(SpanLabel::TextTokens, n_image, rows.len()));
        TensorDump::new(h).with_array("hidden", Array::new(vec![rows.len(), d], data).unwrap())
    }

    fn brute_gap(rows: &[Vec<f32>], n_image: usize) -> f64 {
        let mut sum = 0.0;
        for i in &rows[..n_image] {
            for j in &rows[n_image..] {
                sum += 1.0 - cosine(i, j);
            }
        }
        sum / (n_image * (rows.len() - n_image)) as f64
    }

    #[test]
    fn orthonormal_pair_is_one() {
        let g = modality_gap(&decoder_dump(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 1)).unwrap();
        assert!((g.mean_pairwise_distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_tokens_are_zero() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![1.0, 2.0], vec![3.0, -1.0]];
        let g = modality_gap(&decoder_dump(&rows, 2)).unwrap();
        assert!((g.mean_pairwise_distance - brute_gap(&rows, 2)).abs() < 1e-12);
        let same = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(modality_gap(&decoder_dump(&same, 1)).unwrap().mean_pairwise_distance < 1e-12);
    }

    #[test]
    fn matches_brute_force_with_zero_vector() {
        let rows = vec![
            vec![0.3, -1.2, 0.5],
            vec![0.0, 0.0, 0.0],
            vec![2.0, 0.1, -0.4],
            vec![-0.7, 0.9, 1.1],
            vec![0.2, 0.2, -3.0],
        ];
        let g = modality_gap(&decoder_dump(&rows, 2)).unwrap();
        assert!((g.mean_pairwise_distance - brute_gap(&rows, 2)).abs() < 1e-9);
        assert!((0.0..=2.0).contains(&g.centroid_distance));
    }

    #[test]
    fn missing_text_span_is_degenerate() {
        let mut d = decoder_dump(&[vec![1.0], vec![1.0]], 1);
        d.header.spans.retain(|s| s.label != SpanLabel::TextTokens);
        assert!(matches!(modality_gap(&d), Err(DiagError::DegenerateSpan(_))));
    }

    fn distances(points: &[(f64, f64)]) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                out.push(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
            }
        }
        out
    }

    #[test]
    fn pca_gram_and_covariance_paths_agree() {
        // planar data in 3 dims (n > d) and in 12 dims (n < d)
        for d in [3usize, 12] {
            let rows: Vec<Vec<f32>> = (0..6)
                .map(|i| {
                    let (s, t) = (i as f32 * 0.5, ((i * i) % 5) as f32 - 2.0);
                    let mut v = vec![0.0; d];
                    v[0] = s;
                    v[1] = t;
                    v[2] = s - t;
                    v
                })
                .collect();
            let pts = pca_project(&decoder_dump(&rows, 3)).unwrap();
            let proj: Vec<_> = pts.iter().map(|p| (p.x, p.y)).collect();
            let orig: Vec<_> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()).collect();
            let mut want = Vec::new();
            for (i, a) in orig.iter().enumerate() {
                for b in &orig[i + 1..] {
                    want.push(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
                }
            }
            for (g, w) in distances(&proj).iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "d={d}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn pca_is_deterministic_and_tagged() {
        let rows: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32, (i * 2 % 3) as f32, 1.0]).collect();
        let d = decoder_dump(&rows, 2);
        let a = pca_project(&d).unwrap();
        assert_eq!(a, pca_project(&d).unwrap());
        assert_eq!(a.iter().filter(|p| p.role == TokenRole::Image).count(), 2);
        assert!(pca_project(&decoder_dump(&rows[..2], 1)).is_err());
    }
}
