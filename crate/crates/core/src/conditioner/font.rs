//! Font loading, line measurement and coverage rasterization.
//!
//! The bundled face is Arimo (Apache-2.0), which shares Arial's advance
//! widths, so line breaks land where they would with Arial.

use ab_glyph::{point, Font, FontArc, Glyph, PxScale, ScaleFont};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::ConditionError;

/// Identifier that selects the in-repo font.
pub const BUNDLED_FONT: &str = "arimo-regular";

static ARIMO_REGULAR: &[u8] = include_bytes!("../../assets/Arimo-Regular.ttf");

/// A parsed font plus its provenance (name and SHA-256 of the font file).
#[derive(Clone)]
pub struct LoadedFont {
    name: String,
    digest: String,
    font: FontArc,
}

impl std::fmt::Debug for LoadedFont {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedFont")
            .field("name", &self.name)
            .field("digest", &self.digest)
            .finish()
    }
}

/// One laid-out line: positioned glyphs and the rasterized horizontal extent.
pub(crate) struct LineLayout {
    pub glyphs: Vec<Glyph>,
    /// Leftmost inked (or pen) x, floored. Never positive.
    pub min_x: i32,
    /// Width in whole pixels that rasterizing the line touches.
    pub width_px: u32,
}

impl LoadedFont {
    /// Resolve `identifier`: either [`BUNDLED_FONT`] or a path to a TTF/OTF file.
    pub fn load(identifier: &str) -> Result<Self, ConditionError> {
        if identifier == BUNDLED_FONT {
            return Self::from_bytes(BUNDLED_FONT, ARIMO_REGULAR.to_vec());
        }
        let path = Path::new(identifier);
        let bytes = std::fs::read(path).map_err(|e| ConditionError::Render {
            reason: format!("cannot read font {identifier}: {e}"),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| identifier.to_string());
        Self::from_bytes(&name, bytes)
    }

    fn from_bytes(name: &str, bytes: Vec<u8>) -> Result<Self, ConditionError> {
        let digest = hex::encode(Sha256::digest(&bytes));
        let font = FontArc::try_from_vec(bytes).map_err(|e| ConditionError::Render {
            reason: format!("invalid font data for {name}: {e}"),
        })?;
        Ok(Self {
            name: name.to_string(),
            digest,
            font,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Scale at which one em spans exactly `em_px` pixels.
    fn scale_for_em(&self, em_px: u32) -> PxScale {
        let units = self.font.units_per_em().unwrap_or(1000.0);
        PxScale::from(em_px as f32 * self.font.height_unscaled() / units)
    }

    /// Ascent in pixels for an em of `em_px`.
    pub(crate) fn ascent_px(&self, em_px: u32) -> f32 {
        self.font.as_scaled(self.scale_for_em(em_px)).ascent()
    }

    pub(crate) fn layout_line(&self, text: &str, em_px: u32, baseline_y: f32) -> LineLayout {
        let scale = self.scale_for_em(em_px);
        let scaled = self.font.as_scaled(scale);
        let mut glyphs = Vec::with_capacity(text.len());
        let mut pen = 0.0f32;
        let mut prev = None;
        for ch in text.chars() {
            let id = scaled.glyph_id(ch);
            if let Some(p) = prev {
                pen += scaled.kern(p, id);
            }
            glyphs.push(id.with_scale_and_position(scale, point(pen, baseline_y)));
            pen += scaled.h_advance(id);
            prev = Some(id);
        }

        let mut lo = 0.0f32;
        let mut hi = pen;
        for g in &glyphs {
            if let Some(outlined) = self.font.outline_glyph(g.clone()) {
                let b = outlined.px_bounds();
                lo = lo.min(b.min.x);
                hi = hi.max(b.max.x);
            }
        }
        let min_x = lo.floor() as i32;
        let width_px = (hi.ceil() as i32 - min_x).max(0) as u32;
        LineLayout {
            glyphs,
            min_x,
            width_px,
        }
    }

    /// Pixel width the rasterized `text` occupies at `em_px`.
    pub fn measure(&self, text: &str, em_px: u32) -> u32 {
        if text.is_empty() {
            return 0;
        }
        self.layout_line(text, em_px, 0.0).width_px
    }

    /// Accumulate glyph coverage into `coverage` (row-major, `width` columns),
    /// with glyph coordinates offset by `(origin_x, 0)`. Pixels outside the
    /// buffer are dropped.
    pub(crate) fn rasterize_into(
        &self,
        line: &LineLayout,
        origin_x: i32,
        coverage: &mut [f32],
        width: u32,
        height: u32,
    ) {
        for g in &line.glyphs {
            let Some(outlined) = self.font.outline_glyph(g.clone()) else {
                continue;
            };
            let b = outlined.px_bounds();
            let base_x = b.min.x as i32 + origin_x;
            let base_y = b.min.y as i32;
            outlined.draw(|gx, gy, c| {
                let x = base_x + gx as i32;
                let y = base_y + gy as i32;
                if x < 0 || y < 0 || x >= width as i32 || y >= height as i32 {
                    return;
                }
                let idx = y as usize * width as usize + x as usize;
                coverage[idx] = (coverage[idx] + c).min(1.0);
            });
        }
    }
}
