//! Semi-synthetic detection datasets: colorized, transformed glyphs
//! alpha-composited onto background photographs.

mod glyphs;
mod idx;
mod render;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use glyphs::{Alphabet, Glyph, GlyphArchive};
pub use idx::{parse_idx, read_idx_file, IdxArray, IdxError};
pub use render::{
    colorize_glyph, hsv_to_rgb, sample_render_params, transform_glyph, GlyphRenderParams,
    RenderRanges, RgbaPatch, HUE_RANGE, OPACITY_RANGE, SATURATION_RANGE, VALUE_RANGE,
};

use crate::coco::{write_manifest, CocoError};
use crate::rng::{label_key, rng_for};
use crate::types::{Annotation, BoundingBox, DatasetManifest, ImageRecord, TypeError};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const MIN_BACKGROUND_SIDE: u32 = 64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("transformed glyph degenerates below 2x2 pixels")]
    Degenerate,
    #[error("background {width}x{height} is smaller than {MIN_BACKGROUND_SIDE}x{MIN_BACKGROUND_SIDE}")]
    BackgroundTooSmall { width: u32, height: u32 },
    #[error("background directory {0} contains no readable images")]
    NoBackgrounds(PathBuf),
    #[error("glyph archive is empty")]
    EmptyArchive,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("split {0} is empty or missing")]
    EmptySplit(String),
    #[error("split {0} has no annotations")]
    NoAnnotations(String),
    #[error(transparent)]
    Coco(#[from] CocoError),
    #[error(transparent)]
    Types(#[from] TypeError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum GlyphSource {
    /// Bitmap-font glyphs; needs no external files.
    Procedural {
        #[serde(default = "default_alphabet")]
        alphabet: Alphabet,
        #[serde(default = "default_per_class")]
        per_class: usize,
    },
    /// MNIST (digits) or EMNIST-letters (letters) IDX files, optionally gzipped.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_alphabet")]
        alphabet: Alphabet,
    },
}

fn default_alphabet() -> Alphabet {
    Alphabet::Digits
}

fn default_per_class() -> usize {
    100
}

impl Default for GlyphSource {
    fn default() -> Self {
        GlyphSource::Procedural {
            alphabet: default_alphabet(),
            per_class: default_per_class(),
        }
    }
}

impl GlyphSource {
    pub fn alphabet(&self) -> Alphabet {
        match self {
            GlyphSource::Procedural { alphabet, .. } | GlyphSource::Idx { alphabet, .. } => *alphabet,
        }
    }

    pub fn load(&self, seed: u64) -> Result<GlyphArchive, SynthError> {
        let archive = match self {
            GlyphSource::Procedural {
                alphabet,
                per_class,
            } => GlyphArchive::procedural(*alphabet, *per_class, seed),
            GlyphSource::Idx {
                images,
                labels,
                alphabet,
            } => GlyphArchive::load_idx(images, labels, *alphabet)?,
        };
        if archive.is_empty() {
            return Err(SynthError::EmptyArchive);
        }
        Ok(archive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "val" => self.val,
            "test" => self.test,
            _ => 0,
        }
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 20_000,
            val: 500,
            test: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub name: String,
    /// Poisson mean of glyph instances per image.
    pub instance_rate: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Rendered height of the 28-pixel glyph raster, as a fraction of image height.
    pub glyph_height: (f64, f64),
    pub shear: (f64, f64),
    /// Source gray level above which a pixel belongs to the tight box.
    pub alpha_threshold: f64,
    pub splits: SplitSizes,
    /// Directory of background photographs; procedural noise when unset.
    pub background_dir: Option<PathBuf>,
    pub glyphs: GlyphSource,
    pub seed: u64,
    pub placement_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "MNIST-Det".into(),
            instance_rate: 3.0,
            image_width: 300,
            image_height: 300,
            glyph_height: (0.04, 0.30),
            shear: (-0.3, 0.3),
            alpha_threshold: 0.05,
            splits: SplitSizes::default(),
            background_dir: None,
            glyphs: GlyphSource::default(),
            seed: 0,
            placement_retries: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if !(self.instance_rate > 0.0 && self.instance_rate.is_finite()) {
            return bad("synth.instance_rate must be > 0");
        }
        let (lo, hi) = self.glyph_height;
        if !(lo > 0.0 && hi >= lo) {
            return bad("synth.glyph_height must be a positive range");
        }
        if self.shear.1 < self.shear.0 {
            return bad("synth.shear must be an ordered range");
        }
        if self.image_width < MIN_BACKGROUND_SIDE || self.image_height < MIN_BACKGROUND_SIDE {
            return bad("synth.image_width/image_height must be at least 64");
        }
        if !(0.0..1.0).contains(&self.alpha_threshold) {
            return bad("synth.alpha_threshold must be in [0, 1)");
        }
        Ok(())
    }

    /// Scale ranges expressed as raster magnification for a glyph of `raster_height` pixels.
    pub fn render_ranges(&self, image_height: u32, raster_height: usize) -> RenderRanges {
        let k = image_height as f64 / raster_height as f64;
        RenderRanges {
            scale: (self.glyph_height.0 * k, self.glyph_height.1 * k),
            shear: self.shear,
        }
    }
}

/// Alpha-blends `patch` over `canvas`; pixels with zero alpha are not touched.
pub fn blend_patch(canvas: &mut RgbImage, patch: &RgbaPatch) {
    let (cw, ch) = (canvas.width() as i64, canvas.height() as i64);
    for j in 0..patch.height {
        let y = patch.origin.1 + j as i64;
        if y < 0 || y >= ch {
            continue;
        }
        for i in 0..patch.width {
            let x = patch.origin.0 + i as i64;
            if x < 0 || x >= cw {
                continue;
            }
            let [r, g, b, a] = patch.pixel(i, j);
            if a <= 0.0 {
                continue;
            }
            let px = canvas.get_pixel_mut(x as u32, y as u32);
            for (c, v) in [r, g, b].into_iter().enumerate() {
                let bg = px.0[c] as f32;
                px.0[c] = (a * v * 255.0 + (1.0 - a) * bg).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// Result of compositing glyphs onto one background.
#[derive(Debug, Clone)]
pub struct Composite {
    pub image: RgbImage,
    pub annotations: Vec<Annotation>,
}

/// Draws `n ~ Poisson(λ)` glyphs, places each fully inside the image and
/// blends them in draw order. A glyph that cannot be placed within the retry
/// budget is skipped with a warning.
pub fn composite_image(
    background: &RgbImage,
    archive: &GlyphArchive,
    config: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<Composite, SynthError> {
    let (w, h) = background.dimensions();
    if w < MIN_BACKGROUND_SIDE || h < MIN_BACKGROUND_SIDE {
        return Err(SynthError::BackgroundTooSmall {
            width: w,
            height: h,
        });
    }
    if archive.is_empty() {
        return Err(SynthError::EmptyArchive);
    }
    let poisson =
        Poisson::new(config.instance_rate).map_err(|e| SynthError::Config(e.to_string()))?;
    let n = poisson.sample(rng) as usize;
    let mut image = background.clone();
    let mut annotations = Vec::with_capacity(n);
    for _ in 0..n {
        let glyph = &archive.glyphs[rng.random_range(0..archive.len())];
        let ranges = config.render_ranges(h, glyph.height);
        let mut placed = None;
        for _ in 0..config.placement_retries.max(1) {
            let params = sample_render_params(rng, &ranges);
            let patch = colorize_glyph(glyph, &params);
            let Ok((patch, bbox)) = transform_glyph(&patch, &params, config.alpha_threshold as f32)
            else {
                continue;
            };
            match place(&bbox, w, h, rng) {
                Some((dx, dy)) => {
                    placed = Some((patch.shifted(dx, dy), bbox.translate(dx as f64, dy as f64)));
                    break;
                }
                None => continue,
            }
        }
        match placed {
            Some((patch, bbox)) => {
                blend_patch(&mut image, &patch);
                annotations.push(Annotation {
                    bbox,
                    category_id: glyph.label,
                });
            }
            None => log::warn!(
                "skipping glyph of class {} after {} placement attempts",
                glyph.label,
                config.placement_retries
            ),
        }
    }
    Ok(Composite { image, annotations })
}

/// Integer offset putting `bbox` uniformly inside `[0, w] × [0, h]`.
fn place(bbox: &BoundingBox, w: u32, h: u32, rng: &mut impl Rng) -> Option<(i64, i64)> {
    let lo_x = (-bbox.x_min).ceil() as i64;
    let hi_x = (w as f64 - bbox.x_max).floor() as i64;
    let lo_y = (-bbox.y_min).ceil() as i64;
    let hi_y = (h as f64 - bbox.y_max).floor() as i64;
    if hi_x < lo_x || hi_y < lo_y {
        return None;
    }
    Some((rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y)))
}

/// Smooth colored value noise with fine grain, standing in for photographs.
pub fn procedural_background(width: u32, height: u32, rng: &mut impl Rng) -> RgbImage {
    const GRID: usize = 6;
    let lattice: Vec<[f32; 3]> = (0..(GRID + 1) * (GRID + 1))
        .map(|_| [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()])
        .collect();
    let grain: u64 = rng.random();
    ImageBuffer::from_fn(width, height, |x, y| {
        let u = x as f32 / width as f32 * GRID as f32;
        let v = y as f32 / height as f32 * GRID as f32;
        let (iu, iv) = (u.floor() as usize, v.floor() as usize);
        let (fu, fv) = (u - iu as f32, v - iv as f32);
        let at = |a: usize, b: usize| lattice[b.min(GRID) * (GRID + 1) + a.min(GRID)];
        let mut px = [0u8; 3];
        let noise = crate::rng::derive_seed(&[grain, x as u64, y as u64]) % 41;
        for (c, out) in px.iter_mut().enumerate() {
            let top = at(iu, iv)[c] * (1.0 - fu) + at(iu + 1, iv)[c] * fu;
            let bottom = at(iu, iv + 1)[c] * (1.0 - fu) + at(iu + 1, iv + 1)[c] * fu;
            let base = (top * (1.0 - fv) + bottom * fv) * 215.0 + noise as f32;
            *out = base.clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    })
}

enum Backgrounds {
    Procedural,
    Files(Vec<PathBuf>),
}

impl Backgrounds {
    fn open(dir: Option<&Path>) -> Result<Self, SynthError> {
        let Some(dir) = dir else {
            return Ok(Backgrounds::Procedural);
        };
        let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(SynthError::NoBackgrounds(dir.to_path_buf()));
        }
        Ok(Backgrounds::Files(files))
    }

    fn draw(&self, width: u32, height: u32, rng: &mut impl Rng) -> Result<RgbImage, SynthError> {
        match self {
            Backgrounds::Procedural => Ok(procedural_background(width, height, rng)),
            Backgrounds::Files(files) => {
                let path = &files[rng.random_range(0..files.len())];
                let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
                if img.width() < MIN_BACKGROUND_SIDE || img.height() < MIN_BACKGROUND_SIDE {
                    return Err(SynthError::BackgroundTooSmall {
                        width: img.width(),
                        height: img.height(),
                    });
                }
                Ok(image::imageops::resize(
                    &img,
                    width,
                    height,
                    image::imageops::FilterType::Triangle,
                ))
            }
        }
    }
}

/// Renders image `index` of `split`. Depends only on (config, split, index).
pub fn render_image(
    config: &SynthConfig,
    archive: &GlyphArchive,
    split: &str,
    index: usize,
) -> Result<Composite, SynthError> {
    let backgrounds = Backgrounds::open(config.background_dir.as_deref())?;
    render_with(config, archive, &backgrounds, split, index)
}

fn render_with(
    config: &SynthConfig,
    archive: &GlyphArchive,
    backgrounds: &Backgrounds,
    split: &str,
    index: usize,
) -> Result<Composite, SynthError> {
    let mut rng = rng_for(&[config.seed, label_key(split), index as u64]);
    let bg = backgrounds.draw(config.image_width, config.image_height, &mut rng)?;
    composite_image(&bg, archive, config, &mut rng)
}

/// Generates every split under `root`, writing PNGs and COCO documents.
///
/// Image ids are assigned contiguously: train first, then val, then test.
pub fn generate_dataset(config: &SynthConfig, root: &Path) -> Result<DatasetManifest, SynthError> {
    config.validate()?;
    let archive = config.glyphs.load(config.seed)?;
    let backgrounds = Backgrounds::open(config.background_dir.as_deref())?;
    let mut splits = BTreeMap::new();
    let mut next_id = 0u64;
    for split in SPLITS {
        let n = config.splits.get(split);
        let dir = root.join(split).join("images");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let base = next_id;
        let records = (0..n)
            .into_par_iter()
            .map(|index| -> Result<ImageRecord, SynthError> {
                let composite = render_with(config, &archive, &backgrounds, split, index)?;
                let file_name = format!("{split}/images/{index:06}.png");
                let path = root.join(&file_name);
                composite.image.save(&path).map_err(|e| io_err(&path, e))?;
                Ok(ImageRecord {
                    image_id: base + index as u64,
                    file_name,
                    width: config.image_width,
                    height: config.image_height,
                    annotations: composite.annotations,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        next_id += n as u64;
        splits.insert(split.to_string(), records);
    }
    let manifest = DatasetManifest::new(
        config.name.clone(),
        config.glyphs.alphabet().category_names(),
        splits,
    )?;
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Box variability of a split, relative to image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub std_cx: f64,
    pub std_cy: f64,
    pub std_w: f64,
    pub std_h: f64,
    pub mean_instances: f64,
    pub images: usize,
    pub instances: usize,
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn dataset_stats(manifest: &DatasetManifest, split: &str) -> Result<DatasetStats, SynthError> {
    let images = manifest.split(split);
    if images.is_empty() {
        return Err(SynthError::EmptySplit(split.to_string()));
    }
    let (mut cx, mut cy, mut w, mut h) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for img in images {
        let (iw, ih) = (img.width as f64, img.height as f64);
        for ann in &img.annotations {
            let (x, y) = ann.bbox.center();
            cx.push(x / iw);
            cy.push(y / ih);
            w.push(ann.bbox.width() / iw);
            h.push(ann.bbox.height() / ih);
        }
    }
    if cx.is_empty() {
        return Err(SynthError::NoAnnotations(split.to_string()));
    }
    Ok(DatasetStats {
        std_cx: population_std(&cx),
        std_cy: population_std(&cy),
        std_w: population_std(&w),
        std_h: population_std(&h),
        mean_instances: cx.len() as f64 / images.len() as f64,
        images: images.len(),
        instances: cx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn small_config() -> SynthConfig {
        SynthConfig {
            splits: SplitSizes {
                train: 10,
                val: 2,
                test: 4,
            },
            image_width: 96,
            image_height: 96,
            glyphs: GlyphSource::Procedural {
                alphabet: Alphabet::Digits,
                per_class: 3,
            },
            seed: 17,
            ..SynthConfig::default()
        }
    }

    fn solid_glyph() -> GlyphArchive {
        let mut gray = vec![0.0; 28 * 28];
        for y in 4..24 {
            for x in 8..20 {
                gray[y * 28 + x] = 1.0;
            }
        }
        GlyphArchive {
            glyphs: vec![Glyph {
                width: 28,
                height: 28,
                gray,
                label: 3,
            }],
            num_classes: 10,
            source: "test".into(),
        }
    }

    #[test]
    fn transparent_patch_leaves_background_identical() {
        let mut rng = rng_for(&[1]);
        let bg = procedural_background(80, 80, &mut rng);
        let mut canvas = bg.clone();
        let patch = RgbaPatch {
            width: 10,
            height: 10,
            origin: (5, 5),
            rgba: vec![[0.7, 0.2, 0.1, 0.0]; 100],
            gray: vec![0.0; 100],
        };
        blend_patch(&mut canvas, &patch);
        assert_eq!(canvas, bg);
    }

    #[test]
    fn zero_rate_draw_leaves_background() {
        let config = SynthConfig {
            instance_rate: 1e-9,
            ..small_config()
        };
        let bg = procedural_background(96, 96, &mut rng_for(&[2]));
        let out = composite_image(&bg, &solid_glyph(), &config, &mut rng_for(&[3])).unwrap();
        assert!(out.annotations.is_empty());
        assert_eq!(out.image, bg);
    }

    #[test]
    fn single_opaque_instance_matches_tight_box() {
        let archive = solid_glyph();
        let params = GlyphRenderParams {
            scale: 2.0,
            ..GlyphRenderParams::identity()
        };
        let patch = colorize_glyph(&archive.glyphs[0], &params);
        let (patch, bbox) = transform_glyph(&patch, &params, 0.05).unwrap();
        assert_eq!(bbox, BoundingBox::new(16.0, 8.0, 40.0, 48.0).unwrap());
        let mut canvas = RgbImage::new(100, 100);
        let shifted = patch.shifted(10, 20);
        blend_patch(&mut canvas, &shifted);
        // opaque white inside the placed box, untouched outside
        assert_eq!(canvas.get_pixel(30, 50).0, [255, 255, 255]);
        assert_eq!(canvas.get_pixel(90, 90).0, [0, 0, 0]);
        let placed = bbox.translate(10.0, 20.0);
        assert_eq!(placed, BoundingBox::new(26.0, 28.0, 50.0, 68.0).unwrap());
    }

    #[test]
    fn composite_boxes_stay_inside_and_categories_follow_glyphs() {
        let config = small_config();
        let archive = config.glyphs.load(0).unwrap();
        let bg = procedural_background(96, 96, &mut rng_for(&[4]));
        let mut rng = rng_for(&[5]);
        let mut total = 0;
        for _ in 0..50 {
            let out = composite_image(&bg, &archive, &config, &mut rng).unwrap();
            for ann in &out.annotations {
                assert!(ann.bbox.within(96.0, 96.0), "{:?}", ann.bbox);
                assert!(ann.category_id < 10);
            }
            total += out.annotations.len();
        }
        assert!(total > 50);
    }

    #[test]
    fn small_background_rejected() {
        let bg = RgbImage::new(32, 80);
        assert!(matches!(
            composite_image(&bg, &solid_glyph(), &small_config(), &mut rng_for(&[0])),
            Err(SynthError::BackgroundTooSmall { .. })
        ));
    }

    #[test]
    fn generate_small_dataset_is_deterministic() {
        let config = small_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&config, a.path()).unwrap();
        let mb = generate_dataset(&config, b.path()).unwrap();
        assert_eq!(ma.split("train").len(), 10);
        assert_eq!(ma.split("val").len(), 2);
        assert_eq!(ma.split("test").len(), 4);
        assert_eq!(ma.splits(), mb.splits());
        for rel in [
            "manifest.json",
            "train/annotations.json",
            "test/annotations.json",
            "train/images/000007.png",
            "val/images/000001.png",
        ] {
            let fa = fs::read(a.path().join(rel)).unwrap();
            let fb = fs::read(b.path().join(rel)).unwrap();
            assert!(fa == fb, "{rel} differs");
        }
        // [x, y, w, h] storage round-trips corners to within an ulp
        let reloaded = crate::coco::load_manifest(&a.path().join("manifest.json")).unwrap();
        for (split, images) in ma.splits() {
            for (x, y) in images.iter().zip(reloaded.split(split)) {
                assert_eq!(x.annotations.len(), y.annotations.len());
                for (p, q) in x.annotations.iter().zip(&y.annotations) {
                    assert_eq!(p.category_id, q.category_id);
                    for (u, v) in p.bbox.as_array().iter().zip(q.bbox.as_array()) {
                        assert!((u - v).abs() < 1e-9);
                    }
                }
            }
        }
        let ids: Vec<u64> = ma.split("val").iter().map(|r| r.image_id).collect();
        assert_eq!(ids, vec![10, 11]);
    }

    #[test]
    fn background_directory_is_used_and_errors_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Backgrounds::open(Some(dir.path())),
            Err(SynthError::NoBackgrounds(_))
        ));
        let bg = procedural_background(128, 100, &mut rng_for(&[9]));
        bg.save(dir.path().join("bg.png")).unwrap();
        let config = SynthConfig {
            background_dir: Some(dir.path().to_path_buf()),
            ..small_config()
        };
        let archive = config.glyphs.load(0).unwrap();
        let out = render_image(&config, &archive, "train", 0).unwrap();
        assert_eq!(out.image.dimensions(), (96, 96));
        assert!(matches!(
            Backgrounds::open(Some(&dir.path().join("missing"))),
            Err(SynthError::Io { .. })
        ));
    }

    #[test]
    fn stats_examples() {
        let img = |anns: Vec<(f64, f64, f64, f64)>| ImageRecord {
            image_id: 0,
            file_name: String::new(),
            width: 100,
            height: 100,
            annotations: anns
                .into_iter()
                .map(|(a, b, c, d)| Annotation {
                    bbox: BoundingBox::new(a, b, c, d).unwrap(),
                    category_id: 0,
                })
                .collect(),
        };
        let m = |anns| {
            DatasetManifest::new(
                "s",
                vec!["a".into()],
                BTreeMap::from([("train".to_string(), vec![img(anns)])]),
            )
            .unwrap()
        };
        let same = dataset_stats(&m(vec![(10.0, 10.0, 20.0, 20.0); 3]), "train").unwrap();
        assert!(same.std_cx.abs() < 1e-12 && same.std_w.abs() < 1e-12 && same.std_h.abs() < 1e-12);
        assert_eq!(same.mean_instances, 3.0);
        let two = dataset_stats(
            &m(vec![(20.0, 0.0, 30.0, 10.0), (70.0, 0.0, 80.0, 10.0)]),
            "train",
        )
        .unwrap();
        assert!((two.std_cx - 0.25).abs() < 1e-12);
        assert!(matches!(
            dataset_stats(&m(vec![]), "train"),
            Err(SynthError::NoAnnotations(_))
        ));
        assert!(matches!(
            dataset_stats(&m(vec![]), "test"),
            Err(SynthError::EmptySplit(_))
        ));
    }
}
