//! On-disk dataset layout:
//!
//! ```text
//! root/meta.json                         {"classes": [...], "image_size": [W, H]}
//! root/images/{split}/{image_id}.png
//! root/labels/{split}/{image_id}.json    {"objects": [{"class_id": 0, "bbox": [x0, y0, x1, y1]}]}
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{BBox, ClassCatalog, GroundTruthObject, LabeledImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub classes: ClassCatalog,
    pub image_size: [usize; 2],
}

impl DatasetMeta {
    pub fn width(&self) -> usize {
        self.image_size[0]
    }

    pub fn height(&self) -> usize {
        self.image_size[1]
    }
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    objects: Vec<LabelObject>,
}

#[derive(Serialize, Deserialize)]
struct LabelObject {
    class_id: i64,
    bbox: [f64; 4],
}

pub fn meta_path(root: &Path) -> PathBuf {
    root.join("meta.json")
}

pub fn image_path(root: &Path, split: Split, image_id: &str) -> PathBuf {
    root.join("images").join(split.as_str()).join(format!("{image_id}.png"))
}

pub fn label_path(root: &Path, split: Split, image_id: &str) -> PathBuf {
    root.join("labels").join(split.as_str()).join(format!("{image_id}.json"))
}

pub fn read_meta(root: &Path) -> Result<DatasetMeta> {
    let path = meta_path(root);
    if !path.is_file() {
        return Err(CoreError::MissingMeta(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::json(&path, e))
}

pub fn write_meta(root: &Path, meta: &DatasetMeta) -> Result<()> {
    let path = meta_path(root);
    write_json_atomic(&path, meta)
}

/// Image ids of a split, sorted.
pub fn list_split(root: &Path, split: Split) -> Result<Vec<String>> {
    let dir = root.join("labels").join(split.as_str());
    let entries = fs::read_dir(&dir).map_err(|e| CoreError::io(&dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::io(&dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Load all labeled images of a split, sorted by image id.
pub fn load_dataset(root: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let meta = read_meta(root)?;
    list_split(root, split)?
        .iter()
        .map(|id| load_image(root, split, id, &meta))
        .collect()
}

pub fn load_labels(root: &Path, split: Split, image_id: &str, meta: &DatasetMeta) -> Result<Vec<GroundTruthObject>> {
    let path = label_path(root, split, image_id);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let file: LabelFile = serde_json::from_str(&text).map_err(|e| CoreError::json(&path, e))?;
    let (w, h) = (meta.width(), meta.height());
    file.objects
        .into_iter()
        .map(|o| {
            if o.class_id < 0 || o.class_id as usize >= meta.classes.len() {
                return Err(CoreError::UnknownClass {
                    image_id: image_id.to_string(),
                    class_id: o.class_id,
                    file: path.clone(),
                });
            }
            let bbox = BBox::try_from(o.bbox)?;
            if !bbox.within(w as f64, h as f64) {
                return Err(CoreError::BoxOutsideImage {
                    image_id: image_id.to_string(),
                    bbox: o.bbox,
                    width: w,
                    height: h,
                });
            }
            Ok(GroundTruthObject {
                bbox,
                class_id: o.class_id as usize,
            })
        })
        .collect()
}

pub fn load_image(root: &Path, split: Split, image_id: &str, meta: &DatasetMeta) -> Result<LabeledImage> {
    let objects = load_labels(root, split, image_id, meta)?;
    let path = image_path(root, split, image_id);
    let img = image::open(&path)
        .map_err(|e| CoreError::Image {
            path: path.clone(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (meta.width(), meta.height()) {
        return Err(CoreError::ImageSizeMismatch {
            image_id: image_id.to_string(),
            expected_w: meta.width(),
            expected_h: meta.height(),
            actual_w: w,
            actual_h: h,
        });
    }
    let pixels = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    LabeledImage::new(image_id, w, h, pixels, objects)
}

/// Canonical label file bytes for a list of objects.
pub fn label_json(objects: &[GroundTruthObject]) -> String {
    let file = LabelFile {
        objects: objects
            .iter()
            .map(|o| LabelObject {
                class_id: o.class_id as i64,
                bbox: o.bbox.to_array(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("label serialization cannot fail");
    s.push('\n');
    s
}

pub fn save_labels(root: &Path, split: Split, image_id: &str, objects: &[GroundTruthObject]) -> Result<()> {
    let path = label_path(root, split, image_id);
    write_bytes_atomic(&path, label_json(objects).as_bytes())
}

/// Quantize `[0,1]` pixels to 8-bit RGB.
pub fn to_rgb8(image: &LabeledImage) -> image::RgbImage {
    let raw: Vec<u8> = image
        .pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::RgbImage::from_raw(image.width as u32, image.height as u32, raw).expect("pixel buffer matches dimensions")
}

pub fn save_image(root: &Path, split: Split, image: &LabeledImage) -> Result<()> {
    let path = image_path(root, split, &image.image_id);
    ensure_parent(&path)?;
    to_rgb8(image).save(&path).map_err(|e| CoreError::Image { path, source: e })
}

/// Write every image (PNG) and label file of a split.
pub fn save_dataset(root: &Path, split: Split, images: &[LabeledImage]) -> Result<()> {
    for img in images {
        save_image(root, split, img)?;
        save_labels(root, split, &img.image_id, &img.objects)?;
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    Ok(())
}

/// Write via a temporary sibling file and rename over the target.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CoreError::json(path, e))?;
    s.push('\n');
    write_bytes_atomic(path, s.as_bytes())
}
