use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Ordered list of class labels. Class ids are `0..len()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(CoreError::InvalidCatalog("catalog has no classes".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(CoreError::InvalidCatalog(format!("class {i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(CoreError::InvalidCatalog(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        self.names.get(class_id).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check(&self, class_id: usize) -> Result<()> {
        if class_id < self.len() {
            Ok(())
        } else {
            Err(CoreError::ClassOutOfRange {
                class_id,
                num_classes: self.len(),
            })
        }
    }
}

impl TryFrom<Vec<String>> for ClassCatalog {
    type Error = CoreError;

    fn try_from(names: Vec<String>) -> Result<Self> {
        ClassCatalog::new(names)
    }
}

impl From<ClassCatalog> for Vec<String> {
    fn from(c: ClassCatalog) -> Self {
        c.names
    }
}

/// Axis-aligned box in pixel coordinates, origin top-left, y pointing down.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        // Written so that NaN coordinates are rejected too.
        if !(x_min < x_max && y_min < y_max) || ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box from a center point and a (positive) size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Closed containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Mirror about the vertical axis of an image of the given width.
    pub fn hflip(&self, width: f64) -> BBox {
        BBox {
            x_min: width - self.x_max,
            y_min: self.y_min,
            x_max: width - self.x_min,
            y_max: self.y_max,
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = CoreError;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    #[serde(rename = "bbox")]
    pub bbox: BBox,
    pub class_id: usize,
}

/// An image with its ground-truth objects.
///
/// `pixels` is row-major `height x width x 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub objects: Vec<GroundTruthObject>,
}

impl LabeledImage {
    pub fn new(
        image_id: impl Into<String>,
        width: usize,
        height: usize,
        pixels: Vec<f32>,
        objects: Vec<GroundTruthObject>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if pixels.len() != width * height * 3 {
            return Err(CoreError::ShapeMismatch {
                what: "LabeledImage pixels",
                detail: format!("{} values for {width}x{height}x3", pixels.len()),
            });
        }
        for o in &objects {
            if !o.bbox.within(width as f64, height as f64) {
                return Err(CoreError::BoxOutsideImage {
                    image_id,
                    bbox: o.bbox.to_array(),
                    width,
                    height,
                });
            }
        }
        Ok(Self {
            image_id,
            width,
            height,
            pixels,
            objects,
        })
    }

    /// Number of available objects.
    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Horizontally mirrored copy (pixels and boxes).
    pub fn hflip(&self) -> LabeledImage {
        let mut pixels = vec![0.0; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + x) * 3;
                let dst = (y * self.width + (self.width - 1 - x)) * 3;
                pixels[dst..dst + 3].copy_from_slice(&self.pixels[src..src + 3]);
            }
        }
        let w = self.width as f64;
        LabeledImage {
            image_id: self.image_id.clone(),
            width: self.width,
            height: self.height,
            pixels,
            objects: self
                .objects
                .iter()
                .map(|o| GroundTruthObject {
                    bbox: o.bbox.hflip(w),
                    class_id: o.class_id,
                })
                .collect(),
        }
    }
}

/// A click position plus the class the annotator assigned to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserInput {
    pub x: f64,
    pub y: f64,
    pub class_id: usize,
}

impl UserInput {
    pub fn validate(&self, width: usize, height: usize, num_classes: usize) -> Result<()> {
        if self.class_id >= num_classes {
            return Err(CoreError::ClassOutOfRange {
                class_id: self.class_id,
                num_classes,
            });
        }
        if !(self.x >= 0.0 && self.y >= 0.0 && self.x <= width as f64 && self.y <= height as f64) {
            return Err(CoreError::InvalidParameter(format!(
                "user input ({}, {}) outside {width}x{height} image",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "bbox")]
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}
