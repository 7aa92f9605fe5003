mod common;

use std::collections::BTreeMap;

use common::synth::{bits_equal, decoder_dump, random_dump, random_vision_dump, vision_hidden_dump};
use pii_core::diagnostics::{
    attention_received, cosine, layerwise_similarity, modality_gap, pca_project, self_attention_diagonal,
    text_bias_ratio,
};
use pii_core::tensor_io::{
    read_dump, validate_schema, write_dump, Array, DumpHeader, Expectation, SpanLabel, TensorDump, TensorIoError,
    TokenSpan,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

#[test]
fn hundred_random_dumps_round_trip_bit_exactly() {
    let mut rng = Pcg64::seed_from_u64(11);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let dump = random_dump(&mut rng);
        let path = dir.path().join(format!("{i}.piid"));
        write_dump(&dump, &path).unwrap();
        let back = read_dump(&path).unwrap();
        assert!(bits_equal(&dump, &back), "dump {i} changed on round trip");
    }
}

#[test]
fn truncation_is_reported_at_every_tenth() {
    let mut rng = Pcg64::seed_from_u64(12);
    for _ in 0..20 {
        let bytes = random_dump(&mut rng).to_bytes().unwrap();
        for tenth in 0..10 {
            let cut = bytes.len() * tenth / 10;
            let err = TensorDump::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, TensorIoError::TruncatedFile { .. }), "cut {cut}/{}: {err}", bytes.len());
        }
    }
}

fn brute_gap(hidden: &[Vec<f32>], n_image: usize) -> f64 {
    let mut sum = 0.0;
    for i in &hidden[..n_image] {
        for j in &hidden[n_image..] {
            sum += 1.0 - cosine(i, j);
        }
    }
    sum / (n_image * (hidden.len() - n_image)) as f64
}

fn hidden_strategy() -> impl Strategy<Value = (Vec<Vec<f32>>, usize)> {
    (2usize..10, 1usize..8).prop_flat_map(|(t, d)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f32..5.0, d), t),
            1..t,
        )
    })
}

proptest! {
    #[test]
    fn received_attention_mass_is_one(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5, layer in 1usize..=2) {
        let dump = random_vision_dump(seed, (rows, cols));
        prop_assert!(validate_schema(&dump, Expectation::VisionAttention).is_ok());
        let g = attention_received(&dump, layer).unwrap();
        let total: f64 = g.values.iter().sum::<f64>() + g.cls_received;
        prop_assert!((total - 1.0).abs() < 1e-5, "total {}", total);
        prop_assert!(g.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn bias_ratio_is_scale_invariant(
        diag in prop::collection::vec(0.01f64..1.0, 3..40),
        start_frac in 0.0f64..1.0,
        scale in 0.001f64..1000.0,
    ) {
        let start = ((diag.len() - 1) as f64 * start_frac) as usize;
        let end = (start + 1 + diag.len() / 3).min(diag.len() - 1).max(start + 1);
        let span = TokenSpan::new(SpanLabel::TextRegionPatches, start, end);
        let (_, _, r) = text_bias_ratio(&diag, &span).unwrap();
        let scaled: Vec<f64> = diag.iter().map(|v| v * scale).collect();
        let (_, _, rs) = text_bias_ratio(&scaled, &span).unwrap();
        prop_assert!((r - rs).abs() <= 1e-9 * r.max(1.0), "{} vs {}", r, rs);
    }

    #[test]
    fn diagonal_stays_within_unit_interval(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
        let dump = random_vision_dump(seed, (rows, cols));
        let d = self_attention_diagonal(&dump, 1).unwrap();
        prop_assert_eq!(d.values.len(), 1 + rows * cols);
        prop_assert_eq!(d.cls_indices.clone(), vec![0]);
        prop_assert!(d.values.iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)));
    }

    #[test]
    fn gap_is_bounded_and_matches_pairwise_mean((hidden, n_image) in hidden_strategy()) {
        let g = modality_gap(&decoder_dump("d", &hidden, n_image)).unwrap();
        prop_assert!((0.0..=2.0).contains(&g.mean_pairwise_distance));
        prop_assert!((0.0..=2.0).contains(&g.centroid_distance));
        prop_assert!((g.mean_pairwise_distance - brute_gap(&hidden, n_image).clamp(0.0, 2.0)).abs() < 1e-5);
    }

    #[test]
    fn gap_ignores_per_token_rescaling(
        (hidden, n_image) in hidden_strategy(),
        scales in prop::collection::vec(0.01f32..100.0, 10),
    ) {
        let scaled: Vec<Vec<f32>> = hidden
            .iter()
            .zip(scales.iter().cycle())
            .map(|(row, s)| row.iter().map(|v| v * s).collect())
            .collect();
        let a = modality_gap(&decoder_dump("d", &hidden, n_image)).unwrap();
        let b = modality_gap(&decoder_dump("d", &scaled, n_image)).unwrap();
        prop_assert!((a.mean_pairwise_distance - b.mean_pairwise_distance).abs() < 1e-5);
    }

    #[test]
    fn similarity_is_symmetric_and_reflexive(seed in any::<u64>(), t in 2usize..8, d in 1usize..6) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let va: Vec<f32> = (0..3 * t * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let vb: Vec<f32> = (0..3 * t * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let a = vision_hidden_dump("a", 3, t, d, |l, p, k| va[(l * t + p) * d + k]);
        let b = vision_hidden_dump("b", 3, t, d, |l, p, k| vb[(l * t + p) * d + k]);
        let ab = layerwise_similarity(&a, &b, &[1, 2, 3]).unwrap().values();
        let ba = layerwise_similarity(&b, &a, &[1, 2, 3]).unwrap().values();
        prop_assert_eq!(&ab, &ba);
        prop_assert!(ab.iter().all(|v| (-1.0 - 1e-9..=1.0 + 1e-9).contains(v)));
        for v in layerwise_similarity(&a, &a, &[1, 2, 3]).unwrap().values() {
            prop_assert!((v - 1.0).abs() < 1e-6 || v == 0.0);
        }
    }

    #[test]
    fn pca_preserves_planar_distances(pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..12), d in 3usize..10) {
        // embed planar points in a random-ish 2D subspace of R^d
        let u: Vec<f64> = (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
        let w: Vec<f64> = (0..d).map(|k| if k == 0 { 0.0 } else { 1.0 / ((d - 1) as f64).sqrt() }).collect();
        let hidden: Vec<Vec<f32>> = pts
            .iter()
            .map(|&(x, y)| (0..d).map(|k| (x * u[k] + y * w[k] + 3.0) as f32).collect())
            .collect();
        let proj = pca_project(&decoder_dump("d", &hidden, 1)).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let orig: f64 = hidden[i].iter().zip(&hidden[j]).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
                let got = ((proj[i].x - proj[j].x).powi(2) + (proj[i].y - proj[j].y).powi(2)).sqrt();
                prop_assert!((orig - got).abs() < 1e-3 * orig.max(1.0), "{} vs {}", orig, got);
            }
        }
    }
}

#[test]
fn header_attributes_survive_the_file_format() {
    let mut h = DumpHeader::new("prop", "attrs");
    h.attributes = BTreeMap::from([("layer_count".into(), "24".into())]);
    let dump = TensorDump::new(h).with_array("x", Array::new(vec![2], vec![1.0, -0.0]).unwrap());
    let back = TensorDump::from_bytes(&dump.to_bytes().unwrap()).unwrap();
    assert!(bits_equal(&dump, &back));
}
