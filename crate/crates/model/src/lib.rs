//! The C3Det interactive detector: network, losses, training and the
//! click-protocol evaluation harness.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod detector;
mod error;
pub mod evalharness;
pub mod gradcheck;
pub mod inputs;
pub mod loss;
pub mod network;
pub mod params;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{C3Order, DecodeConfig, ModelConfig, Variant};
pub use detector::Detector;
pub use error::{ModelError, Result};
pub use trainer::TrainConfig;
