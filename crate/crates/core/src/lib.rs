//! Shared building blocks for interactive multi-class tiny-object detection.
//!
//! - [`types`]: boxes, class catalogs, user inputs and detections.
//! - [`dataset`]: the on-disk dataset layout (`meta.json`, PNG images, JSON labels).
//! - [`dota`]: a text-label import shim for DOTA-style polygon annotations.
//! - [`rng`]: seeded, stream-addressed random sources.
//! - [`heatmap`]: Gaussian rendering, class-wise collation and resize/normalize.
//! - [`simulate`]: simulated user clicks for training and evaluation sessions.
//! - [`metrics`]: IoU, average precision and (COCO-style) mAP.
//! - [`synthgen`]: a deterministic synthetic dataset generator.

pub mod dataset;
pub mod dota;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod rng;
pub mod simulate;
pub mod synthgen;
pub mod types;

pub use error::CoreError;
pub use rng::RandomSource;
pub use types::{BBox, ClassCatalog, Detection, GroundTruthObject, LabeledImage, UserInput};
