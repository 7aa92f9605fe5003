//! Analyses over `.piid` dumps: received attention and self-attention
//! diagonals, conditioned-vs-control layer similarity, and the image/text
//! modality gap with a per-sample PCA projection.
//!
//! Layer numbers are 1-based throughout, so layer 4 of a 24-layer encoder
//! is `attn[3, ..]`.

mod attention;
mod gap;
mod similarity;

pub use attention::{
    attention_received, bias_report, mean_curve, self_attention_diagonal, text_bias_ratio, AttentionGrid, BiasReport,
    Diagonal, LayerBias,
};
pub use gap::{gap_report, modality_gap, pca_project, GapReport, GapStats, PcaPoint, TokenRole};
pub use similarity::{final_layers, layerwise_similarity, SimilarityProfile};

use thiserror::Error;

use crate::tensor_io::{SpanLabel, TensorDump, TensorIoError};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("layer {layer} out of range (dump has {available} layers)")]
    LayerOutOfRange { layer: usize, available: usize },
    #[error("degenerate span: {0}")]
    DegenerateSpan(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dump {sample}: missing array {name}")]
    MissingArray { sample: String, name: String },
    #[error(transparent)]
    Dump(#[from] TensorIoError),
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn require<'a>(dump: &'a TensorDump, name: &str) -> Result<&'a crate::tensor_io::Array, DiagError> {
    dump.array(name).ok_or_else(|| DiagError::MissingArray {
        sample: dump.header.sample_id.clone(),
        name: name.to_string(),
    })
}

fn check_layer(layer: usize, available: usize) -> Result<usize, DiagError> {
    if layer == 0 || layer > available {
        return Err(DiagError::LayerOutOfRange { layer, available });
    }
    Ok(layer - 1)
}

fn is_cls(dump: &TensorDump, token: usize) -> bool {
    dump.spans(SpanLabel::Cls).any(|s| s.contains(token))
}
