//! Synthetic `.piid` dumps.

use pii_core::conditioner::Condition;
use pii_core::tensor_io::{Array, DumpHeader, SpanLabel, TensorDump, TokenSpan};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Arbitrary header and up to three arrays of arbitrary f32 bit patterns
/// (NaNs and infinities included).
pub fn random_dump(rng: &mut Pcg64) -> TensorDump {
    let mut header = DumpHeader::new("synthetic", format!("sample-{}", rng.gen::<u16>()));
    header.condition = [None, Some(Condition::Baseline), Some(Condition::PromptInImage)][rng.gen_range(0..3)];
    if rng.gen_bool(0.5) {
        header.patch_grid = Some((rng.gen_range(1..5), rng.gen_range(1..5)));
    }
    let mut at = 0;
    for label in [SpanLabel::Cls, SpanLabel::ImageTokens, SpanLabel::TextTokens] {
        if rng.gen_bool(0.6) {
            let len = rng.gen_range(1..5);
            header.spans.push(TokenSpan::new(label, at, at + len));
            at += len;
        }
    }
    header.attributes.insert("model".into(), "synthetic \"quoted\" ü".into());
    let mut dump = TensorDump::new(header);
    for k in 0..rng.gen_range(1..4) {
        let ndim = rng.gen_range(0..5);
        let dims: Vec<usize> = (0..ndim).map(|_| rng.gen_range(0..4)).collect();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| f32::from_bits(rng.gen())).collect();
        dump = dump.with_array(&format!("arr{k}"), Array::new(dims, data).unwrap());
    }
    dump
}

pub fn bits_equal(a: &TensorDump, b: &TensorDump) -> bool {
    a.header == b.header
        && a.arrays.len() == b.arrays.len()
        && a.arrays.iter().zip(&b.arrays).all(|((na, xa), (nb, xb))| {
            na == nb
                && xa.dims == xb.dims
                && xa.data.iter().map(|v| v.to_bits()).eq(xb.data.iter().map(|v| v.to_bits()))
        })
}

/// `attn[L,H,T,T]` with every entry from `f(layer, head, query, key)`.
pub fn attention(layers: usize, heads: usize, t: usize, f: impl Fn(usize, usize, usize, usize) -> f32) -> Array {
    let mut a = Array::zeros(vec![layers, heads, t, t]);
    for l in 0..layers {
        for h in 0..heads {
            for q in 0..t {
                for k in 0..t {
                    a.set(&[l, h, q, k], f(l, h, q, k));
                }
            }
        }
    }
    a
}

/// Random softmax rows.
pub fn softmax_attention(rng: &mut Pcg64, layers: usize, heads: usize, t: usize) -> Array {
    let mut a = Array::zeros(vec![layers, heads, t, t]);
    for l in 0..layers {
        for h in 0..heads {
            for q in 0..t {
                let logits: Vec<f64> = (0..t).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let z: f64 = logits.iter().map(|x| x.exp()).sum();
                for (k, x) in logits.iter().enumerate() {
                    a.set(&[l, h, q, k], (x.exp() / z) as f32);
                }
            }
        }
    }
    a
}

/// Vision dump with a class token at 0 followed by a `grid` of patches.
pub fn vision_dump(sample_id: &str, grid: (usize, usize), attn: Array) -> TensorDump {
    let mut header = DumpHeader::new("synthetic", sample_id);
    header.patch_grid = Some(grid);
    header.spans.push(TokenSpan::new(SpanLabel::Cls, 0, 1));
    TensorDump::new(header).with_array("attn", attn)
}

pub fn random_vision_dump(seed: u64, grid: (usize, usize)) -> TensorDump {
    let mut rng = Pcg64::seed_from_u64(seed);
    let t = 1 + grid.0 * grid.1;
    vision_dump("v", grid, softmax_attention(&mut rng, 2, 3, t))
}

/// Final-layer decoder dump: the first `n_image` rows are image tokens,
/// the rest text tokens.
pub fn decoder_dump(sample_id: &str, hidden: &[Vec<f32>], n_image: usize) -> TensorDump {
    let t = hidden.len();
    let d = hidden[0].len();
    let mut header = DumpHeader::new("synthetic", sample_id);
    header.spans.push(TokenSpan::new(SpanLabel::ImageTokens, 0, n_image));
    header.spans.push(TokenSpan::new(SpanLabel::TextTokens, n_image, t));
    let data = hidden.iter().flatten().copied().collect();
    TensorDump::new(header).with_array("hidden", Array::new(vec![t, d], data).unwrap())
}

/// Vision `hidden[L,T,D]` dump with a class token at 0.
pub fn vision_hidden_dump(sample_id: &str, layers: usize, t: usize, d: usize, f: impl Fn(usize, usize, usize) -> f32) -> TensorDump {
    let mut a = Array::zeros(vec![layers, t, d]);
    for l in 0..layers {
        for p in 0..t {
            for k in 0..d {
                a.set(&[l, p, k], f(l, p, k));
            }
        }
    }
    let mut h = DumpHeader::new("synthetic", sample_id);
    h.spans.push(TokenSpan::new(SpanLabel::Cls, 0, 1));
    TensorDump::new(h).with_array("hidden", a)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
