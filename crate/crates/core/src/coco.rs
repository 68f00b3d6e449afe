//! COCO-style annotation documents and the on-disk dataset manifest.
//!
//! Layout under a dataset root:
//!
//! ```text
//! <root>/manifest.json                 name, categories, split -> annotation file
//! <root>/<split>/annotations.json      COCO object-detection document
//! <root>/<split>/images/%06d.png
//! ```
//!
//! Category ids are positional indices into the ordered category list.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Annotation, BoundingBox, DatasetManifest, ImageRecord, TypeError};

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("annotation {annotation_id} references unknown image {image_id}")]
    DanglingAnnotation { annotation_id: u64, image_id: u64 },
    #[error("invalid dataset: {0}")]
    Invalid(#[from] TypeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: usize,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: usize,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    #[serde(default)]
    pub info: serde_json::Value,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoDocument {
    /// Annotation ids are assigned sequentially in image order, starting at 1.
    pub fn from_records<'a, I>(categories: &[String], images: I) -> Self
    where
        I: IntoIterator<Item = &'a ImageRecord>,
    {
        let mut doc = CocoDocument {
            info: serde_json::Value::Null,
            images: Vec::new(),
            annotations: Vec::new(),
            categories: categories
                .iter()
                .enumerate()
                .map(|(id, name)| CocoCategory {
                    id,
                    name: name.clone(),
                    supercategory: String::new(),
                })
                .collect(),
        };
        for img in images {
            doc.images.push(CocoImage {
                id: img.image_id,
                file_name: img.file_name.clone(),
                width: img.width,
                height: img.height,
            });
            for ann in &img.annotations {
                doc.annotations.push(CocoAnnotation {
                    id: doc.annotations.len() as u64 + 1,
                    image_id: img.image_id,
                    category_id: ann.category_id,
                    bbox: ann.bbox.to_xywh(),
                    area: ann.bbox.area(),
                    iscrowd: 0,
                });
            }
        }
        doc
    }

    /// Image records in document order with their annotations attached.
    pub fn to_records(&self) -> Result<Vec<ImageRecord>, CocoError> {
        let mut records: Vec<ImageRecord> = self
            .images
            .iter()
            .map(|img| ImageRecord {
                image_id: img.id,
                file_name: img.file_name.clone(),
                width: img.width,
                height: img.height,
                annotations: Vec::new(),
            })
            .collect();
        let pos: BTreeMap<u64, usize> = self
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| (img.id, i))
            .collect();
        for ann in &self.annotations {
            let &i = pos
                .get(&ann.image_id)
                .ok_or(CocoError::DanglingAnnotation {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                })?;
            let [x, y, w, h] = ann.bbox;
            records[i].annotations.push(Annotation {
                bbox: BoundingBox::from_xywh(x, y, w, h)?,
                category_id: ann.category_id,
            });
        }
        Ok(records)
    }

    pub fn category_names(&self) -> Vec<String> {
        let mut cats = self.categories.clone();
        cats.sort_by_key(|c| c.id);
        cats.into_iter().map(|c| c.name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub name: String,
    pub categories: Vec<String>,
    /// Split name -> annotation document path relative to the manifest.
    pub splits: BTreeMap<String, String>,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CocoError> {
    let text = fs::read_to_string(path).map_err(|source| CocoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CocoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CocoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CocoError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| CocoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|source| CocoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `manifest.json` plus one annotation document per split.
pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<PathBuf, CocoError> {
    let mut splits = BTreeMap::new();
    for (split, images) in manifest.splits() {
        let rel = format!("{split}/annotations.json");
        let doc = CocoDocument::from_records(manifest.categories(), images);
        write_json(&root.join(&rel), &doc)?;
        splits.insert(split.clone(), rel);
    }
    let file = ManifestFile {
        name: manifest.name().to_string(),
        categories: manifest.categories().to_vec(),
        splits,
    };
    let path = root.join("manifest.json");
    write_json(&path, &file)?;
    Ok(path)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CocoError> {
    let file: ManifestFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut splits = BTreeMap::new();
    for (split, rel) in &file.splits {
        let doc: CocoDocument = read_json(&base.join(rel))?;
        splits.insert(split.clone(), doc.to_records()?);
    }
    Ok(DatasetManifest::new(file.name, file.categories, splits)?)
}
