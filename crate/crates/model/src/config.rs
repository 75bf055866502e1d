//! Model configuration and the variant matrix.

use std::fmt;
use std::str::FromStr;

use c3det_core::heatmap::{SIGMA_EARLY_FUSION, SIGMA_LATE_FUSION};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// How per-input correlation maps are combined into class channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C3Order {
    /// One template and correlation map per input, then a class-wise max.
    CorrelateThenCollate,
    /// Class-wise max of the normalized input heatmaps, one template per class.
    CollateThenCorrelate,
}

/// The trainable architectures compared by the evaluation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    LfOnly,
    C3Only,
    NoUel,
    CollateThenCorrelate,
    EarlyFusion,
    LateFusionBaseline,
    DetectorOnly,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::LfOnly,
        Variant::C3Only,
        Variant::NoUel,
        Variant::CollateThenCorrelate,
        Variant::EarlyFusion,
        Variant::LateFusionBaseline,
        Variant::DetectorOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LfOnly => "lf_only",
            Variant::C3Only => "c3_only",
            Variant::NoUel => "no_uel",
            Variant::CollateThenCorrelate => "collate_then_correlate",
            Variant::EarlyFusion => "early_fusion",
            Variant::LateFusionBaseline => "late_fusion_baseline",
            Variant::DetectorOnly => "detector_only",
        }
    }

    pub fn uses_lf(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::LfOnly | Variant::NoUel | Variant::CollateThenCorrelate | Variant::LateFusionBaseline
        )
    }

    pub fn c3_order(self) -> Option<C3Order> {
        match self {
            Variant::Full | Variant::C3Only | Variant::NoUel => Some(C3Order::CorrelateThenCollate),
            Variant::CollateThenCorrelate => Some(C3Order::CollateThenCorrelate),
            _ => None,
        }
    }

    pub fn uses_c3(self) -> bool {
        self.c3_order().is_some()
    }

    pub fn uses_uel(self) -> bool {
        matches!(
            self,
            Variant::Full | Variant::LfOnly | Variant::C3Only | Variant::CollateThenCorrelate
        )
    }

    pub fn early_fusion(self) -> bool {
        self == Variant::EarlyFusion
    }

    /// Whether the network looks at user inputs at all.
    pub fn uses_inputs(self) -> bool {
        self.uses_lf() || self.uses_c3() || self.early_fusion()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant {s:?}")))
    }
}

/// Detection post-processing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub score_thr: f64,
    pub nms_iou: f64,
    pub top_n: usize,
    /// Bound on the predicted log-size (in stride units) before `exp`.
    pub max_log_size: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_thr: 0.05,
            nms_iou: 0.5,
            top_n: 300,
            max_log_size: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone_channels: usize,
    pub stride: usize,
    pub lf_channels: usize,
    pub fusion_proj_channels: usize,
    /// Number of convolution blocks in the backbone and in the LF extractor.
    pub blocks: usize,
    pub variant: Variant,
    pub lambda_uel: f64,
    pub sigma_lf: f64,
    pub sigma_c3: f64,
    pub sigma_early: f64,
    /// Pre-NMS candidates scoring below this floor do not enter the UEL.
    pub uel_score_floor: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub box_loss_weight: f64,
    /// Per-channel pixel standardization applied before the backbone.
    pub pixel_mean: f64,
    pub pixel_std: f64,
    pub decode: DecodeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone_channels: 64,
            stride: 4,
            lf_channels: 64,
            fusion_proj_channels: 64,
            blocks: 4,
            variant: Variant::Full,
            lambda_uel: 1.0,
            sigma_lf: SIGMA_LATE_FUSION,
            sigma_c3: SIGMA_LATE_FUSION,
            sigma_early: SIGMA_EARLY_FUSION,
            uel_score_floor: 0.01,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            box_loss_weight: 1.0,
            pixel_mean: 0.5,
            pixel_std: 0.25,
            decode: DecodeConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Narrow network sized for single-core CPU training of the synthetic set.
    pub fn desk() -> Self {
        Self {
            backbone_channels: 32,
            lf_channels: 16,
            fusion_proj_channels: 32,
            ..Self::default()
        }
    }

    /// Width settings of the published configuration (256-channel FPN level,
    /// stride 8). Kept for reference; far too slow for CPU training.
    pub fn paper_profile() -> Self {
        Self {
            backbone_channels: 256,
            stride: 8,
            lf_channels: 256,
            fusion_proj_channels: 256,
            blocks: 5,
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "paper-profile" => Ok(Self::paper_profile()),
            other => Err(ModelError::Config(format!("unknown model profile {other:?}"))),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Number of stride-2 blocks.
    pub fn downsample_blocks(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }

    /// Feature-map size for an `H x W` image: `ceil(H / stride)`.
    pub fn feature_size(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.stride), width.div_ceil(self.stride))
    }

    /// `lambda_uel` as used by the loss: zero for variants without UEL.
    pub fn effective_lambda_uel(&self) -> f64 {
        if self.variant.uses_uel() {
            self.lambda_uel
        } else {
            0.0
        }
    }

    /// Sigma of the heatmaps fed to the early-fusion backbone or the LF extractor.
    pub fn input_sigma(&self) -> f64 {
        if self.variant.early_fusion() {
            self.sigma_early
        } else {
            self.sigma_lf
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if ![2, 4, 8].contains(&self.stride) {
            return bad(format!("stride {} must be 2, 4 or 8", self.stride));
        }
        if self.backbone_channels == 0 || self.lf_channels == 0 || self.fusion_proj_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.blocks < self.downsample_blocks() {
            return bad(format!("{} blocks cannot reach stride {}", self.blocks, self.stride));
        }
        for (name, v) in [("sigma_lf", self.sigma_lf), ("sigma_c3", self.sigma_c3), ("sigma_early", self.sigma_early)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.lambda_uel >= 0.0 && self.lambda_uel.is_finite()) {
            return bad(format!("lambda_uel = {} must be non-negative", self.lambda_uel));
        }
        if !(self.pixel_std > 0.0) {
            return bad("pixel_std must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.decode.nms_iou) || !(0.0..=1.0).contains(&self.decode.score_thr) {
            return bad("decode thresholds must lie in [0, 1]".into());
        }
        Ok(())
    }
}
