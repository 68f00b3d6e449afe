//! Glyph archives: grayscale rasters with class labels.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::idx::{parse_idx, read_idx_file, IdxArray, IdxError};
use crate::rng::{label_key, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alphabet {
    Digits,
    Letters,
}

impl Alphabet {
    pub fn num_classes(self) -> usize {
        match self {
            Alphabet::Digits => 10,
            Alphabet::Letters => 26,
        }
    }

    pub fn category_names(self) -> Vec<String> {
        match self {
            Alphabet::Digits => (0..10).map(|d| d.to_string()).collect(),
            Alphabet::Letters => (b'A'..=b'Z').map(|c| (c as char).to_string()).collect(),
        }
    }
}

/// Grayscale raster in row-major order, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub width: usize,
    pub height: usize,
    pub gray: Vec<f32>,
    pub label: usize,
}

impl Glyph {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.gray[y * self.width + x]
    }
}

#[derive(Debug, Clone)]
pub struct GlyphArchive {
    pub glyphs: Vec<Glyph>,
    pub num_classes: usize,
    pub source: String,
}

impl GlyphArchive {
    /// Pairs an IDX3 image array with an optional IDX1 label array.
    ///
    /// Without labels every glyph gets label 0. `label_offset` is subtracted
    /// from raw labels (EMNIST letters are 1-based); `transpose` swaps rows and
    /// columns (EMNIST stores images transposed).
    pub fn from_idx(
        images: &IdxArray,
        labels: Option<&IdxArray>,
        num_classes: usize,
        label_offset: i64,
        transpose: bool,
    ) -> Result<Self, IdxError> {
        if images.dims.len() != 3 {
            return Err(IdxError::Rank {
                expected: 3,
                found: images.dims.len(),
            });
        }
        let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
        let raw_labels: Vec<i64> = match labels {
            Some(l) => {
                if l.dims.len() != 1 {
                    return Err(IdxError::Rank {
                        expected: 1,
                        found: l.dims.len(),
                    });
                }
                if l.dims[0] != n {
                    return Err(IdxError::CountMismatch {
                        images: n,
                        labels: l.dims[0],
                    });
                }
                l.data.iter().map(|&b| b as i64 - label_offset).collect()
            }
            None => vec![0; n],
        };
        let px = rows * cols;
        let mut glyphs = Vec::with_capacity(n);
        for (i, &label) in raw_labels.iter().enumerate() {
            if label < 0 || label as usize >= num_classes {
                return Err(IdxError::LabelRange {
                    index: i,
                    label,
                    num_classes,
                });
            }
            let src = &images.data[i * px..(i + 1) * px];
            let (width, height, gray) = if transpose {
                let mut g = vec![0.0; px];
                for r in 0..rows {
                    for c in 0..cols {
                        g[c * rows + r] = src[r * cols + c] as f32 / 255.0;
                    }
                }
                (rows, cols, g)
            } else {
                (cols, rows, src.iter().map(|&b| b as f32 / 255.0).collect())
            };
            glyphs.push(Glyph {
                width,
                height,
                gray,
                label: label as usize,
            });
        }
        Ok(Self {
            glyphs,
            num_classes,
            source: "idx".into(),
        })
    }

    pub fn from_idx_bytes(images: &[u8], labels: Option<&[u8]>) -> Result<Self, IdxError> {
        let images = parse_idx(images)?;
        let labels = labels.map(parse_idx).transpose()?;
        Self::from_idx(&images, labels.as_ref(), Alphabet::Digits.num_classes(), 0, false)
    }

    /// Loads MNIST digits or EMNIST letters from IDX files (optionally gzipped).
    pub fn load_idx(images: &Path, labels: &Path, alphabet: Alphabet) -> Result<Self, IdxError> {
        let img = read_idx_file(images)?;
        let lbl = read_idx_file(labels)?;
        let (offset, transpose) = match alphabet {
            Alphabet::Digits => (0, false),
            Alphabet::Letters => (1, true),
        };
        let mut archive = Self::from_idx(&img, Some(&lbl), alphabet.num_classes(), offset, transpose)?;
        archive.source = images.display().to_string();
        Ok(archive)
    }

    /// Deterministic hand-written-looking glyphs rendered from a 5×7 bitmap font
    /// with per-sample stroke width, cell size and slant, anti-aliased by 4×4
    /// supersampling into 28×28 rasters.
    pub fn procedural(alphabet: Alphabet, per_class: usize, seed: u64) -> Self {
        let mut glyphs = Vec::with_capacity(per_class * alphabet.num_classes());
        for label in 0..alphabet.num_classes() {
            let bitmap = match alphabet {
                Alphabet::Digits => &DIGITS[label],
                Alphabet::Letters => &LETTERS[label],
            };
            for k in 0..per_class {
                let mut rng = rng_for(&[seed, label_key("glyph"), label as u64, k as u64]);
                glyphs.push(render_bitmap(bitmap, label, &mut rng));
            }
        }
        Self {
            glyphs,
            num_classes: alphabet.num_classes(),
            source: format!("procedural-{alphabet:?}").to_lowercase(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }
}

const RASTER: usize = 28;

fn render_bitmap(rows: &[u8; 7], label: usize, rng: &mut impl Rng) -> Glyph {
    let cell_w: f64 = rng.random_range(2.5..3.3);
    let cell_h: f64 = rng.random_range(2.6..3.1);
    let dilate: f64 = rng.random_range(0.1..0.7);
    let slant: f64 = rng.random_range(-0.2..0.2);
    let c = RASTER as f64 / 2.0;
    let ox = c - 2.5 * cell_w + rng.random_range(-0.5..0.5);
    let oy = c - 3.5 * cell_h + rng.random_range(-0.5..0.5);
    let on = |col: i64, row: i64| -> bool {
        (0..5).contains(&col) && (0..7).contains(&row) && rows[row as usize] & (0b10000 >> col) != 0
    };
    let covered = |x: f64, y: f64| -> bool {
        let u = (x - ox - slant * (y - c)) / cell_w;
        let v = (y - oy) / cell_h;
        let du = dilate / cell_w;
        let dv = dilate / cell_h;
        let (cu, cv) = (u.floor() as i64, v.floor() as i64);
        for row in cv - 1..=cv + 1 {
            for col in cu - 1..=cu + 1 {
                if on(col, row)
                    && u >= col as f64 - du
                    && u < (col + 1) as f64 + du
                    && v >= row as f64 - dv
                    && v < (row + 1) as f64 + dv
                {
                    return true;
                }
            }
        }
        false
    };
    let mut gray = vec![0.0f32; RASTER * RASTER];
    for py in 0..RASTER {
        for px in 0..RASTER {
            let mut hits = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let x = px as f64 + (sx as f64 + 0.5) / 4.0;
                    let y = py as f64 + (sy as f64 + 0.5) / 4.0;
                    if covered(x, y) {
                        hits += 1;
                    }
                }
            }
            // Quantize like the 8-bit source rasters.
            gray[py * RASTER + px] = ((hits as f32 / 16.0) * 255.0).round() / 255.0;
        }
    }
    Glyph {
        width: RASTER,
        height: RASTER,
        gray,
        label,
    }
}

#[rustfmt::skip]
const DIGITS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

#[rustfmt::skip]
const LETTERS: [[u8; 7]; 26] = [
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
    [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
    [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
    [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
    [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
    [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
    [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
    [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
    [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
    [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
    [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
    [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
    [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
    [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
    [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
];

#[cfg(test)]
mod tests {
    use super::super::idx::encode_idx;
    use super::*;

    #[test]
    fn single_glyph_without_labels() {
        let archive = GlyphArchive::from_idx_bytes(&encode_idx(&[1, 2, 2], &[0, 255, 51, 0]), None)
            .unwrap();
        assert_eq!(archive.len(), 1);
        let g = &archive.glyphs[0];
        assert_eq!((g.width, g.height, g.label), (2, 2, 0));
        assert_eq!(g.at(1, 0), 1.0);
        assert!((g.at(0, 1) - 0.2).abs() < 1e-6);
    }

    #[test]
    fn label_count_mismatch() {
        let images = encode_idx(&[2, 1, 1], &[0, 1]);
        let labels = encode_idx(&[3], &[0, 1, 2]);
        assert_eq!(
            GlyphArchive::from_idx_bytes(&images, Some(&labels)).unwrap_err(),
            IdxError::CountMismatch {
                images: 2,
                labels: 3
            }
        );
    }

    #[test]
    fn emnist_letters_are_shifted_and_transposed() {
        let images = parse_idx(&encode_idx(&[1, 2, 3], &[1, 2, 3, 4, 5, 6])).unwrap();
        let labels = parse_idx(&encode_idx(&[1], &[26])).unwrap();
        let a = GlyphArchive::from_idx(&images, Some(&labels), 26, 1, true).unwrap();
        let g = &a.glyphs[0];
        assert_eq!((g.width, g.height, g.label), (2, 3, 25));
        // source row 0 = [1,2,3] becomes column 0
        assert!((g.at(0, 2) - 3.0 / 255.0).abs() < 1e-7);
        assert!((g.at(1, 0) - 4.0 / 255.0).abs() < 1e-7);
        let bad = parse_idx(&encode_idx(&[1], &[0])).unwrap();
        assert!(matches!(
            GlyphArchive::from_idx(&images, Some(&bad), 26, 1, true),
            Err(IdxError::LabelRange { label: -1, .. })
        ));
    }

    #[test]
    fn procedural_archive_is_deterministic_and_inked() {
        let a = GlyphArchive::procedural(Alphabet::Digits, 3, 11);
        let b = GlyphArchive::procedural(Alphabet::Digits, 3, 11);
        assert_eq!(a.glyphs, b.glyphs);
        assert_eq!(a.len(), 30);
        for g in &a.glyphs {
            let ink: f32 = g.gray.iter().sum();
            assert!(ink > 20.0, "glyph {} nearly empty", g.label);
            assert!(g.gray.iter().all(|v| (0.0..=1.0).contains(v)));
            // border stays clear so transforms see the whole glyph
            assert!((0..28).all(|i| g.at(i, 0) == 0.0 && g.at(0, i) == 0.0));
        }
        let letters = GlyphArchive::procedural(Alphabet::Letters, 1, 0);
        assert_eq!(letters.num_classes, 26);
        assert_eq!(letters.glyphs.last().unwrap().label, 25);
    }
}
