//! Glyph colorization and affine placement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::glyphs::Glyph;
use super::SynthError;
use crate::types::BoundingBox;

pub const HUE_RANGE: (f64, f64) = (0.0, 1.0);
pub const SATURATION_RANGE: (f64, f64) = (0.05, 1.0);
pub const VALUE_RANGE: (f64, f64) = (0.1, 1.0);
pub const OPACITY_RANGE: (f64, f64) = (0.5, 0.9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphRenderParams {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
    pub opacity: f64,
    /// Pixel magnification applied to the glyph raster.
    pub scale: f64,
    /// Horizontal shear, `x' = x + shear · (y − h/2)`.
    pub shear: f64,
    pub translation: (f64, f64),
}

impl GlyphRenderParams {
    /// Neutral transform with opaque white ink.
    pub fn identity() -> Self {
        Self {
            hue: 0.0,
            saturation: 0.0,
            value: 1.0,
            opacity: 1.0,
            scale: 1.0,
            shear: 0.0,
            translation: (0.0, 0.0),
        }
    }
}

/// Sampling intervals for the geometric parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderRanges {
    pub scale: (f64, f64),
    pub shear: (f64, f64),
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws color, opacity, scale and shear uniformly; translation is left at zero
/// and chosen at placement time.
pub fn sample_render_params(rng: &mut impl Rng, ranges: &RenderRanges) -> GlyphRenderParams {
    GlyphRenderParams {
        hue: uniform(rng, HUE_RANGE),
        saturation: uniform(rng, SATURATION_RANGE),
        value: uniform(rng, VALUE_RANGE),
        opacity: uniform(rng, OPACITY_RANGE),
        scale: uniform(rng, ranges.scale),
        shear: uniform(rng, ranges.shear),
        translation: (0.0, 0.0),
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// RGBA float patch positioned at `origin` in destination pixel coordinates.
/// `gray` carries the (resampled) source intensity used for tight boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbaPatch {
    pub width: usize,
    pub height: usize,
    pub origin: (i64, i64),
    pub rgba: Vec<[f32; 4]>,
    pub gray: Vec<f32>,
}

impl RgbaPatch {
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 4] {
        self.rgba[y * self.width + x]
    }

    /// Integer shift of the patch; pixels are untouched.
    pub fn shifted(mut self, dx: i64, dy: i64) -> Self {
        self.origin = (self.origin.0 + dx, self.origin.1 + dy);
        self
    }

    /// Bounds of pixels whose gray exceeds `threshold`, in destination coordinates.
    pub fn tight_box(&self, threshold: f32) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.gray[y * self.width + x] > threshold {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == usize::MAX {
            return None;
        }
        let (ox, oy) = (self.origin.0 as f64, self.origin.1 as f64);
        BoundingBox::new(ox + x0 as f64, oy + y0 as f64, ox + x1 as f64, oy + y1 as f64).ok()
    }
}

/// RGB = HSV color × gray; alpha = opacity wherever gray > 0.
pub fn colorize_glyph(glyph: &Glyph, params: &GlyphRenderParams) -> RgbaPatch {
    let [r, g, b] = hsv_to_rgb(params.hue, params.saturation, params.value);
    let alpha = params.opacity as f32;
    let rgba = glyph
        .gray
        .iter()
        .map(|&v| {
            if v > 0.0 {
                [r as f32 * v, g as f32 * v, b as f32 * v, alpha]
            } else {
                [0.0; 4]
            }
        })
        .collect();
    RgbaPatch {
        width: glyph.width,
        height: glyph.height,
        origin: (0, 0),
        rgba,
        gray: glyph.gray.clone(),
    }
}

/// Applies scale, shear and translation with bilinear resampling and returns
/// the transformed patch with its tight box (gray > `alpha_threshold`).
pub fn transform_glyph(
    patch: &RgbaPatch,
    params: &GlyphRenderParams,
    alpha_threshold: f32,
) -> Result<(RgbaPatch, BoundingBox), SynthError> {
    let s = params.scale;
    let sh = params.shear;
    let (tx, ty) = params.translation;
    if !(s.is_finite() && s > 0.0 && sh.is_finite()) {
        return Err(SynthError::Degenerate);
    }
    let (w, h) = (patch.width as f64, patch.height as f64);
    let (px, py) = (patch.origin.0 as f64, patch.origin.1 as f64);
    let fwd = |x: f64, y: f64| (s * (x + sh * (y - h / 2.0)) + tx + px, s * y + ty + py);
    let corners = [fwd(0.0, 0.0), fwd(w, 0.0), fwd(0.0, h), fwd(w, h)];
    let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min).floor();
    let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max).ceil();
    let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min).floor();
    let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    let out_w = (max_x - min_x) as usize;
    let out_h = (max_y - min_y) as usize;
    if out_w < 2 || out_h < 2 {
        return Err(SynthError::Degenerate);
    }

    let sample = |u: f64, v: f64| -> ([f32; 4], f32) {
        // u, v in source pixel-center coordinates
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = (u - x0) as f32;
        let fy = (v - y0) as f32;
        let mut acc = [0.0f32; 4];
        let mut gray = 0.0f32;
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let wgt = wx * wy;
                if wgt == 0.0 {
                    continue;
                }
                let sx = x0 as i64 + dx;
                let sy = y0 as i64 + dy;
                if sx < 0 || sy < 0 || sx >= patch.width as i64 || sy >= patch.height as i64 {
                    continue;
                }
                let idx = sy as usize * patch.width + sx as usize;
                let p = patch.rgba[idx];
                for c in 0..4 {
                    acc[c] += wgt * p[c];
                }
                gray += wgt * patch.gray[idx];
            }
        }
        (acc, gray)
    };

    let mut rgba = vec![[0.0f32; 4]; out_w * out_h];
    let mut gray = vec![0.0f32; out_w * out_h];
    for j in 0..out_h {
        for i in 0..out_w {
            let dst_x = min_x + i as f64 + 0.5;
            let dst_y = min_y + j as f64 + 0.5;
            let y = (dst_y - ty - py) / s;
            let x = (dst_x - tx - px) / s - sh * (y - h / 2.0);
            let (p, g) = sample(x - 0.5, y - 0.5);
            rgba[j * out_w + i] = p;
            gray[j * out_w + i] = g;
        }
    }
    let out = RgbaPatch {
        width: out_w,
        height: out_h,
        origin: (min_x as i64, min_y as i64),
        rgba,
        gray,
    };
    // Tight box: forward image of the source pixels above threshold, so the
    // box follows the geometric support rather than the resampling blur.
    let mut bounds = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for y in 0..patch.height {
        let row = &patch.gray[y * patch.width..(y + 1) * patch.width];
        let (Some(first), Some(last)) = (
            row.iter().position(|&g| g > alpha_threshold),
            row.iter().rposition(|&g| g > alpha_threshold),
        ) else {
            continue;
        };
        for (cx, cy) in [
            (first as f64, y as f64),
            (first as f64, y as f64 + 1.0),
            (last as f64 + 1.0, y as f64),
            (last as f64 + 1.0, y as f64 + 1.0),
        ] {
            let (fx, fy) = fwd(cx, cy);
            bounds = (bounds.0.min(fx), bounds.1.min(fy), bounds.2.max(fx), bounds.3.max(fy));
        }
    }
    let bbox = BoundingBox::new(bounds.0, bounds.1, bounds.2, bounds.3)
        .map_err(|_| SynthError::Degenerate)?;
    if bbox.width() < 2.0 || bbox.height() < 2.0 {
        return Err(SynthError::Degenerate);
    }
    Ok((out, bbox))
}
