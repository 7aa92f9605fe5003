use serde::{Deserialize, Serialize};

use super::{check_layer, cosine, is_cls, require, DiagError};
use crate::tensor_io::TensorDump;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub sample_id: String,
    /// `(layer, mean cosine)` in the order requested.
    pub per_layer: Vec<(usize, f64)>,
    pub layers_analyzed: Vec<usize>,
}

impl SimilarityProfile {
    pub fn values(&self) -> Vec<f64> {
        self.per_layer.iter().map(|&(_, v)| v).collect()
    }
}

/// The last `k` layers of an `n`-layer model, 1-based.
pub fn final_layers(n: usize, k: usize) -> Vec<usize> {
    (n.saturating_sub(k) + 1..=n).collect()
}

/// Per layer, the mean over non-class patch positions of the cosine between
/// `a`'s and `b`'s `hidden[L,T,D]` features. Patches where either side is a
/// zero vector count as cosine 0.
pub fn layerwise_similarity(a: &TensorDump, b: &TensorDump, layers: &[usize]) -> Result<SimilarityProfile, DiagError> {
    let ha = require(a, "hidden")?;
    let hb = require(b, "hidden")?;
    if ha.dims != hb.dims {
        return Err(DiagError::ShapeMismatch(format!(
            "hidden shapes differ: {:?} vs {:?}",
            ha.dims, hb.dims
        )));
    }
    if let (Some(ga), Some(gb)) = (a.header.patch_grid, b.header.patch_grid) {
        if ga != gb {
            return Err(DiagError::ShapeMismatch(format!("patch grids differ: {ga:?} vs {gb:?}")));
        }
    }
    let &[n_layers, t, _] = ha.dims.as_slice() else {
        return Err(DiagError::ShapeMismatch(format!("hidden must be [L,T,D], got {:?}", ha.dims)));
    };
    let patches: Vec<usize> = (0..t).filter(|&p| !is_cls(a, p) && !is_cls(b, p)).collect();
    if patches.is_empty() {
        return Err(DiagError::DegenerateSpan("no patch positions outside the class span".into()));
    }

    let mut per_layer = Vec::with_capacity(layers.len());
    for &layer in layers {
        let l = check_layer(layer, n_layers)?;
        let sum: f64 = patches.iter().map(|&p| cosine(ha.row(&[l, p]), hb.row(&[l, p]))).sum();
        per_layer.push((layer, sum / patches.len() as f64));
    }
    Ok(SimilarityProfile {
        sample_id: a.header.sample_id.clone(),
        per_layer,
        layers_analyzed: layers.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{Array, DumpHeader, SpanLabel, TokenSpan};

    fn hidden_dump(layers: usize, t: usize, d: usize, f: impl Fn(usize, usize, usize) -> f32) -> TensorDump {
        let mut a = Array::zeros(vec![layers, t, d]);
        for l in 0..layers {
            for p in 0..t {
                for k in 0..d {
                    a.set(&[l, p, k], f(l, p, k));
                }
            }
        }
        let mut h = DumpHeader::new("synthetic", "s");
        h.spans.push(TokenSpan::new(SpanLabel::Cls, 0, 1));
        TensorDump::new(h).with_array("hidden", a)
    }

    fn wavy(l: usize, p: usize, k: usize) -> f32 {
        ((l * 31 + p * 7 + k * 3) as f32 * 0.37).sin()
    }

    #[test]
    fn self_similarity_is_one() {
        let a = hidden_dump(4, 6, 5, wavy);
        let s = layerwise_similarity(&a, &a, &[1, 2, 3, 4]).unwrap();
        assert!(s.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn negation_is_minus_one() {
        let a = hidden_dump(2, 4, 3, wavy);
        let b = hidden_dump(2, 4, 3, |l, p, k| -wavy(l, p, k));
        let s = layerwise_similarity(&a, &b, &[1, 2]).unwrap();
        assert!(s.values().iter().all(|&v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_patches_count_as_zero() {
        let a = hidden_dump(1, 3, 2, |_, _, _| 1.0);
        let b = hidden_dump(1, 3, 2, |_, p, _| if p == 2 { 0.0 } else { 1.0 });
        let s = layerwise_similarity(&a, &b, &[1]).unwrap();
        assert!((s.values()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_shape_checked() {
        let a = hidden_dump(3, 5, 4, wavy);
        let b = hidden_dump(3, 5, 4, |l, p, k| wavy(l + 1, p, k * 2));
        assert_eq!(
            layerwise_similarity(&a, &b, &[1, 2, 3]).unwrap().per_layer,
            layerwise_similarity(&b, &a, &[1, 2, 3]).unwrap().per_layer
        );
        let c = hidden_dump(3, 4, 4, wavy);
        assert!(matches!(layerwise_similarity(&a, &c, &[1]), Err(DiagError::ShapeMismatch(_))));
    }

    #[test]
    fn final_twelve_of_twenty_four() {
        let layers = final_layers(24, 12);
        assert_eq!(layers, (13..=24).collect::<Vec<_>>());
        let a = hidden_dump(24, 3, 2, wavy);
        assert_eq!(layerwise_similarity(&a, &a, &layers).unwrap().per_layer.len(), 12);
        assert_eq!(final_layers(5, 12), vec![1, 2, 3, 4, 5]);
    }
}
