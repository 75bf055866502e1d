//! Import shim for DOTA-style text labels.
//!
//! Each label line is `x1 y1 x2 y2 x3 y3 x4 y4 class_name [difficulty]`.
//! Polygons collapse to their axis-aligned envelope. `imagesource:` and
//! `gsd:` header lines are skipped. Cropping large scenes into patches is
//! left to the caller; each label file becomes one image entry.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{self, DatasetMeta, Split};
use crate::error::{CoreError, Result};
use crate::types::{BBox, GroundTruthObject};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MalformedLine {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ImportReport {
    pub files: usize,
    pub imported: usize,
    /// Imported objects per class name.
    pub per_class: BTreeMap<String, usize>,
    /// Skipped objects per unknown class name.
    pub unknown_classes: BTreeMap<String, usize>,
    pub malformed: Vec<MalformedLine>,
}

/// Parse one label line into `(envelope, class_name)`.
pub fn parse_line(line: &str) -> std::result::Result<Option<(BBox, String)>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with("imagesource:") || trimmed.starts_with("gsd:") {
        return Ok(None);
    }
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    if tokens.len() != 9 && tokens.len() != 10 {
        return Err(format!("expected 9 or 10 tokens, found {}", tokens.len()));
    }
    let mut coords = [0.0f64; 8];
    for (c, t) in coords.iter_mut().zip(&tokens[..8]) {
        *c = t.parse().map_err(|_| format!("bad coordinate {t:?}"))?;
    }
    let xs = [coords[0], coords[2], coords[4], coords[6]];
    let ys = [coords[1], coords[3], coords[5], coords[7]];
    let fold = |v: &[f64; 4], f: fn(f64, f64) -> f64| v[1..].iter().fold(v[0], |a, &b| f(a, b));
    let bbox = BBox::new(fold(&xs, f64::min), fold(&ys, f64::min), fold(&xs, f64::max), fold(&ys, f64::max))
        .map_err(|e| e.to_string())?;
    Ok(Some((bbox, tokens[8].to_string())))
}

/// Import every `*.txt` label file in `text_dir` into `out_root` (labels only).
///
/// Class names are resolved against `out_root/meta.json`. Boxes are clipped
/// to the declared image size; boxes that vanish under clipping are reported
/// as malformed.
pub fn import_dota(text_dir: &Path, out_root: &Path, split: Split) -> Result<ImportReport> {
    let meta: DatasetMeta = dataset::read_meta(out_root)?;
    let (w, h) = (meta.width() as f64, meta.height() as f64);
    let mut files: Vec<_> = fs::read_dir(text_dir)
        .map_err(|e| CoreError::io(text_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
        .collect();
    files.sort();

    let mut report = ImportReport::default();
    for path in files {
        let image_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        let mut objects = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let malformed = |reason: String| MalformedLine {
                file: file_name.clone(),
                line: lineno + 1,
                reason,
            };
            match parse_line(line) {
                Ok(None) => {}
                Ok(Some((bbox, name))) => {
                    let Some(class_id) = meta.classes.index_of(&name) else {
                        *report.unknown_classes.entry(name).or_default() += 1;
                        continue;
                    };
                    let clipped = BBox::new(
                        bbox.x_min().max(0.0),
                        bbox.y_min().max(0.0),
                        bbox.x_max().min(w),
                        bbox.y_max().min(h),
                    );
                    match clipped {
                        Ok(bbox) => {
                            objects.push(GroundTruthObject { bbox, class_id });
                            *report.per_class.entry(name).or_default() += 1;
                            report.imported += 1;
                        }
                        Err(_) => report.malformed.push(malformed("box lies outside the image".into())),
                    }
                }
                Err(reason) => report.malformed.push(malformed(reason)),
            }
        }
        dataset::save_labels(out_root, split, &image_id, &objects)?;
        report.files += 1;
    }
    Ok(report)
}
