//! `.piid` tensor dumps: attention maps, hidden states and token spans
//! carried from a model exporter to the diagnostics.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PIID"                      magic
//! u32                         format version (1)
//! u32                         header length in bytes
//! [u8; header length]         UTF-8 JSON header
//! repeated header.array_count times:
//!   u16                       name length
//!   [u8; name length]         UTF-8 name
//!   u8                        ndim
//!   [u64; ndim]               dims
//!   [f32; product(dims)]      row-major payload
//! ```
//!
//! The header records how many arrays follow, so a file cut exactly at an
//! array boundary is still reported as truncated.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::conditioner::Condition;

pub const MAGIC: &[u8; 4] = b"PIID";
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on attention row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("not a .piid file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated at byte {offset}: needed {needed} more byte(s) for {what}")]
    TruncatedFile {
        offset: u64,
        needed: u64,
        what: String,
    },
    #[error("array {name}: dims {dims:?} imply {expected} values, found {actual}")]
    ShapeMismatch {
        name: String,
        dims: Vec<u64>,
        expected: u64,
        actual: u64,
    },
    #[error("{0} trailing byte(s) after the last array")]
    TrailingData(u64),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("invalid dump: {0}")]
    Invalid(String),
    #[error("schema violation:\n  {}", .0.join("\n  "))]
    SchemaViolation(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpanLabel {
    ImageTokens,
    TextTokens,
    TextRegionPatches,
    Cls,
}

/// Half-open token index range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub label: SpanLabel,
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(label: SpanLabel, start: usize, end: usize) -> Self {
        Self { label, start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format_version: u32,
    pub producer: String,
    pub sample_id: String,
    #[serde(default)]
    pub spans: Vec<TokenSpan>,
    /// Setting the input image was rendered under, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    /// `(rows, cols)` of the vision patch grid, excluding the class token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_grid: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl DumpHeader {
    pub fn new(producer: impl Into<String>, sample_id: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            producer: producer.into(),
            sample_id: sample_id.into(),
            spans: Vec::new(),
            condition: None,
            patch_grid: None,
            attributes: BTreeMap::new(),
        }
    }
}

/// Header document as stored on disk: the public header plus the array
/// count.
#[derive(Serialize, Deserialize)]
struct StoredHeader {
    #[serde(flatten)]
    header: DumpHeader,
    array_count: usize,
}

/// Row-major f32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorIoError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorIoError::ShapeMismatch {
                name: String::new(),
                dims: dims.iter().map(|&d| d as u64).collect(),
                expected: expected as u64,
                actual: data.len() as u64,
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![0.0; n] }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.dims[i + 1];
        }
        s
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f32) {
        let o = self.offset(index);
        self.data[o] = v;
    }

    /// Contiguous slice of the trailing dimension at the given leading index.
    pub fn row(&self, leading: &[usize]) -> &[f32] {
        debug_assert_eq!(leading.len() + 1, self.dims.len());
        let mut idx = leading.to_vec();
        idx.push(0);
        let start = self.offset(&idx);
        &self.data[start..start + self.dims[self.dims.len() - 1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub header: DumpHeader,
    pub arrays: BTreeMap<String, Array>,
}

impl TensorDump {
    pub fn new(header: DumpHeader) -> Self {
        Self { header, arrays: BTreeMap::new() }
    }

    pub fn with_array(mut self, name: &str, array: Array) -> Self {
        self.arrays.insert(name.to_string(), array);
        self
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.get(name)
    }

    pub fn span(&self, label: SpanLabel) -> Option<&TokenSpan> {
        self.header.spans.iter().find(|s| s.label == label)
    }

    pub fn spans(&self, label: SpanLabel) -> impl Iterator<Item = &TokenSpan> {
        self.header.spans.iter().filter(move |s| s.label == label)
    }

    /// Structural invariants required before writing.
    pub fn check(&self) -> Result<(), TensorIoError> {
        for (name, a) in &self.arrays {
            if name.len() > u16::MAX as usize {
                return Err(TensorIoError::Invalid(format!("array name too long ({} bytes)", name.len())));
            }
            if a.dims.len() > u8::MAX as usize {
                return Err(TensorIoError::Invalid(format!("{name}: too many dims")));
            }
            let expected: usize = a.dims.iter().product();
            if expected != a.data.len() {
                return Err(TensorIoError::ShapeMismatch {
                    name: name.clone(),
                    dims: a.dims.iter().map(|&d| d as u64).collect(),
                    expected: expected as u64,
                    actual: a.data.len() as u64,
                });
            }
        }
        for s in &self.header.spans {
            if s.start >= s.end {
                return Err(TensorIoError::Invalid(format!("empty or reversed span {s:?}")));
            }
        }
        let spans = &self.header.spans;
        for (i, a) in spans.iter().enumerate() {
            for b in &spans[i + 1..] {
                if a.label == b.label && a.start < b.end && b.start < a.end {
                    return Err(TensorIoError::Invalid(format!("overlapping {:?} spans", a.label)));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorIoError> {
        self.check()?;
        let stored = StoredHeader {
            header: self.header.clone(),
            array_count: self.arrays.len(),
        };
        let header = serde_json::to_vec(&stored).map_err(|e| TensorIoError::Header(e.to_string()))?;
        let payload: usize = self.arrays.values().map(|a| a.data.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + header.len() + payload + 64 * self.arrays.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, a) in &self.arrays {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(a.dims.len() as u8);
            for &d in &a.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorIoError> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(TensorIoError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(TensorIoError::VersionUnsupported(version));
        }
        let header_len = r.u32("header length")? as usize;
        let header_bytes = r.take(header_len, "header")?;
        let stored: StoredHeader =
            serde_json::from_slice(header_bytes).map_err(|e| TensorIoError::Header(e.to_string()))?;

        let mut arrays = BTreeMap::new();
        for _ in 0..stored.array_count {
            let name_len = r.u16("array name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "array name")?)
                .map_err(|e| TensorIoError::Invalid(format!("array name is not UTF-8: {e}")))?
                .to_string();
            let ndim = r.take(1, "ndim")?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64("dims")?);
            }
            let count = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .and_then(|c| c.checked_mul(4))
                .ok_or_else(|| TensorIoError::Invalid(format!("{name}: dims {dims:?} overflow")))?;
            let payload = r.take(count as usize, &format!("payload of {name}"))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let dims = dims.into_iter().map(|d| d as usize).collect();
            if arrays.insert(name.clone(), Array { dims, data }).is_some() {
                return Err(TensorIoError::Invalid(format!("duplicate array name {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(TensorIoError::TrailingData((bytes.len() - r.pos) as u64));
        }
        let dump = TensorDump { header: stored.header, arrays };
        dump.check()?;
        Ok(dump)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TensorIoError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(TensorIoError::TruncatedFile {
                offset: self.bytes.len() as u64,
                needed: (n - available) as u64,
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, TensorIoError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, TensorIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TensorIoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Write via a temporary sibling file and rename into place.
pub fn write_dump(dump: &TensorDump, path: &Path) -> Result<(), TensorIoError> {
    let bytes = dump.to_bytes()?;
    let io = |e| TensorIoError::Io { path: path.to_path_buf(), source: e };
    let tmp = path.with_extension("piid.tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn read_dump(path: &Path) -> Result<TensorDump, TensorIoError> {
    let bytes = std::fs::read(path).map_err(|e| TensorIoError::Io { path: path.to_path_buf(), source: e })?;
    TensorDump::from_bytes(&bytes)
}

/// All `*.piid` files in `dir`, sorted by file name.
pub fn list_dumps(dir: &Path) -> Result<Vec<PathBuf>, TensorIoError> {
    let entries = std::fs::read_dir(dir).map_err(|e| TensorIoError::Io { path: dir.to_path_buf(), source: e })?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "piid"))
        .collect();
    out.sort();
    Ok(out)
}

/// Which producer contract a dump is expected to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    /// `attn[L,H,T,T]` (post-softmax), optional `hidden[L,T,D]`.
    VisionAttention,
    /// `hidden[T,D]` from the final decoder layer.
    DecoderHidden,
}

/// Check a dump against a producer contract, collecting every violation.
pub fn validate_schema(dump: &TensorDump, expectation: Expectation) -> Result<(), TensorIoError> {
    let mut issues = Vec::new();
    let tokens = match expectation {
        Expectation::VisionAttention => check_vision(dump, &mut issues),
        Expectation::DecoderHidden => check_decoder(dump, &mut issues),
    };
    if let Some(t) = tokens {
        for s in &dump.header.spans {
            if s.end > t {
                issues.push(format!("span {:?} [{}, {}) exceeds token count {t}", s.label, s.start, s.end));
            }
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(TensorIoError::SchemaViolation(issues))
    }
}

fn check_vision(dump: &TensorDump, issues: &mut Vec<String>) -> Option<usize> {
    let Some(attn) = dump.array("attn") else {
        issues.push("missing array attn[L,H,T,T]".into());
        return None;
    };
    let &[layers, heads, t, t2] = attn.dims.as_slice() else {
        issues.push(format!("attn must have 4 dims, has {:?}", attn.dims));
        return None;
    };
    if t != t2 {
        issues.push(format!("attn matrices must be square, got {t}x{t2}"));
        return None;
    }
    for l in 0..layers {
        for h in 0..heads {
            for q in 0..t {
                let sum: f64 = attn.row(&[l, h, q]).iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    issues.push(format!("attention row (layer {l}, head {h}, row {q}) sums to {sum:.6}"));
                }
            }
        }
    }
    if dump.header.condition.is_some_and(Condition::has_embedded_text)
        && dump.span(SpanLabel::TextRegionPatches).is_none()
    {
        issues.push("conditioned image dump has no TextRegionPatches span".into());
    }
    if let Some(hidden) = dump.array("hidden") {
        if hidden.dims.len() != 3 || hidden.dims[1] != t {
            issues.push(format!("vision hidden must be [L,{t},D], got {:?}", hidden.dims));
        }
    }
    if let Some((rows, cols)) = dump.header.patch_grid {
        let cls: usize = dump.spans(SpanLabel::Cls).map(|s| s.len()).sum();
        if rows * cols + cls != t {
            issues.push(format!("patch grid {rows}x{cols} plus {cls} class token(s) does not equal {t} tokens"));
        }
    }
    Some(t)
}

fn check_decoder(dump: &TensorDump, issues: &mut Vec<String>) -> Option<usize> {
    for label in [SpanLabel::ImageTokens, SpanLabel::TextTokens] {
        if dump.span(label).is_none() {
            issues.push(format!("missing {label:?} span"));
        }
    }
    let Some(hidden) = dump.array("hidden") else {
        issues.push("missing array hidden[T,D]".into());
        return None;
    };
    if hidden.dims.len() != 2 {
        issues.push(format!("hidden must have 2 dims, has {:?}", hidden.dims));
        return None;
    }
    Some(hidden.dims[0])
}
