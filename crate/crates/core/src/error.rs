use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: requires x_min < x_max and y_min < y_max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),
    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },
    #[error("missing dataset meta file {0}")]
    MissingMeta(PathBuf),
    #[error("image {image_id}: box {bbox:?} lies outside the {width}x{height} image")]
    BoxOutsideImage {
        image_id: String,
        bbox: [f64; 4],
        width: usize,
        height: usize,
    },
    #[error("image {image_id}: unknown class {class_id} in {file}")]
    UnknownClass {
        image_id: String,
        class_id: i64,
        file: PathBuf,
    },
    #[error("image {image_id}: image is {actual_w}x{actual_h}, meta declares {expected_w}x{expected_h}")]
    ImageSizeMismatch {
        image_id: String,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error("{what}: shape mismatch ({detail})")]
    ShapeMismatch { what: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate heatmap: resized mass {0:e} is below the normalization floor")]
    DegenerateHeatmap(f64),
    #[error("unknown image id {0}")]
    UnknownImage(String),
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
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        CoreError::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
