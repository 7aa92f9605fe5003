//! Builds the four image-conditioning settings from a source image and a
//! question.
//!
//! Every non-baseline condition appends a strip below the untouched source
//! image. `PromptInImage` and `Hybrid` draw the wrapped question into that
//! strip; `Control` appends a strip of the same size with nothing in it.
//! The top `original_h` rows of every output are bit-identical to the source.

mod font;

pub use font::{LoadedFont, BUNDLED_FONT};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("token {token:?} is {width_px}px wide but lines may be at most {max_width_px}px")]
    UnbreakableToken {
        token: String,
        width_px: u32,
        max_width_px: u32,
    },
    #[error("render failed: {reason}")]
    Render { reason: String },
    #[error("invalid render spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    InvalidInput(String),
}

/// The four input settings compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Control,
    #[serde(rename = "pii")]
    PromptInImage,
    Hybrid,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Baseline,
        Condition::Control,
        Condition::PromptInImage,
        Condition::Hybrid,
    ];

    /// Short name used on the command line and in file names.
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Control => "control",
            Condition::PromptInImage => "pii",
            Condition::Hybrid => "hybrid",
        }
    }

    /// Whether the strip carries rendered question text.
    pub fn has_embedded_text(self) -> bool {
        matches!(self, Condition::PromptInImage | Condition::Hybrid)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Condition::Baseline),
            "control" => Ok(Condition::Control),
            "pii" | "prompt_in_image" | "prompt-in-image" => Ok(Condition::PromptInImage),
            "hybrid" => Ok(Condition::Hybrid),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

/// Typography and strip layout parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    /// [`BUNDLED_FONT`] or a path to a font file.
    pub font_identifier: String,
    /// Em size in pixels.
    pub font_px: u32,
    pub text_color: [u8; 3],
    pub strip_color: [u8; 3],
    /// Desired strip height as a fraction of the total output height.
    pub target_strip_fraction: f64,
    pub padding_px: u32,
    pub line_gap_px: u32,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            font_identifier: BUNDLED_FONT.to_string(),
            font_px: 26,
            text_color: [0, 0, 0],
            strip_color: [255, 255, 255],
            target_strip_fraction: 0.05,
            padding_px: 4,
            line_gap_px: 6,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<(), ConditionError> {
        let f = self.target_strip_fraction;
        if !(f > 0.0 && f < 0.5) {
            return Err(ConditionError::InvalidSpec(format!(
                "target_strip_fraction must lie in (0, 0.5), got {f}"
            )));
        }
        if self.font_px == 0 {
            return Err(ConditionError::InvalidSpec("font_px must be positive".into()));
        }
        Ok(())
    }

    fn line_pitch(&self) -> u32 {
        self.font_px + self.line_gap_px
    }
}

/// Size bookkeeping for the appended strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripGeometry {
    pub original_w: u32,
    pub original_h: u32,
    pub strip_h: u32,
    pub lines: Vec<String>,
    /// `strip_h / (original_h + strip_h)`.
    pub achieved_fraction: f64,
    pub target_fraction: f64,
    /// Set when the text needed more room than the target fraction allows.
    pub exceeds_target: bool,
    pub font_name: String,
    pub font_digest: String,
}

impl StripGeometry {
    pub fn output_h(&self) -> u32 {
        self.original_h + self.strip_h
    }
}

#[derive(Debug, Clone)]
pub struct ConditionedImage {
    pub condition: Condition,
    pub pixels: RgbImage,
    pub geometry: StripGeometry,
    pub content_hash: String,
}

/// SHA-256 over `width (u32 LE) | height (u32 LE) | RGB bytes`, hex encoded.
pub fn pixel_digest(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

/// Lossless 8-bit RGB PNG encoding.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, ConditionError> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| ConditionError::Render {
            reason: format!("png encoding failed: {e}"),
        })?;
    Ok(out)
}

/// Decode any supported image file to 8-bit RGB.
pub fn load_source(path: &std::path::Path) -> Result<RgbImage, ConditionError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| ConditionError::InvalidInput(format!("cannot load {}: {e}", path.display())))
}

pub fn write_png(img: &RgbImage, path: &std::path::Path) -> Result<(), ConditionError> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| ConditionError::Render {
        reason: format!("cannot write {}: {e}", path.display()),
    })
}

/// A render spec bound to its loaded font. Cheap to clone and safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct Renderer {
    spec: RenderSpec,
    font: LoadedFont,
}

impl Renderer {
    pub fn new(spec: RenderSpec) -> Result<Self, ConditionError> {
        spec.validate()?;
        let font = LoadedFont::load(&spec.font_identifier)?;
        Ok(Self { spec, font })
    }

    pub fn spec(&self) -> &RenderSpec {
        &self.spec
    }

    pub fn font(&self) -> &LoadedFont {
        &self.font
    }

    /// Greedy word wrap. Whitespace runs collapse to single spaces.
    pub fn wrap_text(&self, text: &str, max_width_px: u32) -> Result<Vec<String>, ConditionError> {
        let px = self.spec.font_px;
        let mut lines = Vec::new();
        let mut current = String::new();
        for word in text.split_whitespace() {
            let word_w = self.font.measure(word, px);
            if word_w > max_width_px {
                return Err(ConditionError::UnbreakableToken {
                    token: word.to_string(),
                    width_px: word_w,
                    max_width_px,
                });
            }
            if current.is_empty() {
                current.push_str(word);
                continue;
            }
            let candidate = format!("{current} {word}");
            if self.font.measure(&candidate, px) <= max_width_px {
                current = candidate;
            } else {
                lines.push(std::mem::replace(&mut current, word.to_string()));
            }
        }
        if !current.is_empty() {
            lines.push(current);
        }
        Ok(lines)
    }

    /// Strip height for a `w`×`h` source carrying `text`.
    ///
    /// `strip_h = max(round(f·h / (1 − f)), lines·(font_px + line_gap_px) + 2·padding_px)`,
    /// with the second term zero for empty text.
    pub fn compute_strip_geometry(
        &self,
        w: u32,
        h: u32,
        text: &str,
    ) -> Result<StripGeometry, ConditionError> {
        if w == 0 || h == 0 {
            return Err(ConditionError::InvalidInput(format!(
                "image dimensions must be positive, got {w}x{h}"
            )));
        }
        let f = self.spec.target_strip_fraction;
        let max_text_w = w.saturating_sub(2 * self.spec.padding_px);
        let lines = self.wrap_text(text, max_text_w)?;

        let by_fraction = (f * h as f64 / (1.0 - f)).round() as u32;
        let by_text = if lines.is_empty() {
            0
        } else {
            lines.len() as u32 * self.spec.line_pitch() + 2 * self.spec.padding_px
        };
        let strip_h = by_fraction.max(by_text);
        Ok(StripGeometry {
            original_w: w,
            original_h: h,
            strip_h,
            lines,
            achieved_fraction: strip_h as f64 / (h + strip_h) as f64,
            target_fraction: f,
            exceeds_target: by_text > by_fraction,
            font_name: self.font.name().to_string(),
            font_digest: self.font.digest().to_string(),
        })
    }

    pub fn render_condition(
        &self,
        source: &RgbImage,
        question: &str,
        condition: Condition,
    ) -> Result<ConditionedImage, ConditionError> {
        let (w, h) = source.dimensions();
        if w == 0 || h == 0 {
            return Err(ConditionError::InvalidInput("source image is empty".into()));
        }
        if condition.has_embedded_text() && question.trim().is_empty() {
            return Err(ConditionError::InvalidInput(format!(
                "condition {condition} needs a non-empty question"
            )));
        }

        if condition == Condition::Baseline {
            let geometry = StripGeometry {
                original_w: w,
                original_h: h,
                strip_h: 0,
                lines: Vec::new(),
                achieved_fraction: 0.0,
                target_fraction: self.spec.target_strip_fraction,
                exceeds_target: false,
                font_name: self.font.name().to_string(),
                font_digest: self.font.digest().to_string(),
            };
            return Ok(ConditionedImage {
                condition,
                pixels: source.clone(),
                content_hash: pixel_digest(source),
                geometry,
            });
        }

        // Control reuses the text geometry so its output size matches.
        let mut geometry = self.compute_strip_geometry(w, h, question)?;
        let mut out = RgbImage::from_pixel(w, h + geometry.strip_h, image::Rgb(self.spec.strip_color));
        out.as_mut()[..source.as_raw().len()].copy_from_slice(source.as_raw());

        if condition.has_embedded_text() {
            self.draw_lines(&mut out, &geometry);
        } else {
            geometry.lines.clear();
        }

        Ok(ConditionedImage {
            condition,
            content_hash: pixel_digest(&out),
            pixels: out,
            geometry,
        })
    }

    fn draw_lines(&self, out: &mut RgbImage, geometry: &StripGeometry) {
        let (w, strip_h) = (geometry.original_w, geometry.strip_h);
        if strip_h == 0 || geometry.lines.is_empty() {
            return;
        }
        let spec = &self.spec;
        let pitch = spec.line_pitch();
        let needed = geometry.lines.len() as u32 * pitch + 2 * spec.padding_px;
        // Extra room from the fraction term is split evenly above and below.
        let top = spec.padding_px + (strip_h.saturating_sub(needed)) / 2;
        let ascent = self.font.ascent_px(spec.font_px).round();

        let mut coverage = vec![0.0f32; (w * strip_h) as usize];
        for (i, line) in geometry.lines.iter().enumerate() {
            let slot_top = top + i as u32 * pitch + spec.line_gap_px / 2;
            let baseline = slot_top as f32 + ascent;
            let layout = self.font.layout_line(line, spec.font_px, baseline);
            let origin_x = spec.padding_px as i32 - layout.min_x;
            self.font
                .rasterize_into(&layout, origin_x, &mut coverage, w, strip_h);
        }

        let fg = spec.text_color;
        let bg = spec.strip_color;
        let y0 = geometry.original_h;
        for (idx, &c) in coverage.iter().enumerate() {
            if c <= 0.0 {
                continue;
            }
            let a = (c * 255.0).round().clamp(0.0, 255.0) as u32;
            let x = idx as u32 % w;
            let y = y0 + idx as u32 / w;
            let mut px = [0u8; 3];
            for k in 0..3 {
                px[k] = ((bg[k] as u32 * (255 - a) + fg[k] as u32 * a + 127) / 255) as u8;
            }
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
}

/// Wrap `text` with a freshly loaded font for `spec`.
pub fn wrap_text(text: &str, max_width_px: u32, spec: &RenderSpec) -> Result<Vec<String>, ConditionError> {
    Renderer::new(spec.clone())?.wrap_text(text, max_width_px)
}

pub fn compute_strip_geometry(
    w: u32,
    h: u32,
    text: &str,
    spec: &RenderSpec,
) -> Result<StripGeometry, ConditionError> {
    Renderer::new(spec.clone())?.compute_strip_geometry(w, h, text)
}

pub fn render_condition(
    source: &RgbImage,
    question: &str,
    condition: Condition,
    spec: &RenderSpec,
) -> Result<ConditionedImage, ConditionError> {
    Renderer::new(spec.clone())?.render_condition(source, question, condition)
}

/// One line of the conditioning manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source: String,
    pub output: String,
    pub mode: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub original_w: u32,
    pub original_h: u32,
    pub strip_h: u32,
    pub achieved_fraction: f64,
    pub content_hash: String,
    pub font_name: String,
    pub font_digest: String,
}
