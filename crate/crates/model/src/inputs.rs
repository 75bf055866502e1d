//! Conversion of images and user inputs into network input tensors.

use c3det_autograd::{Scalar, Tensor};
use c3det_core::heatmap::{collate_by_class, render_gaussian, resize_normalize, Heatmap};
use c3det_core::{LabeledImage, UserInput};

use crate::config::ModelConfig;
use crate::error::Result;

/// `[3, H, W]` image tensor standardized with the configured mean and std.
pub fn image_tensor<T: Scalar>(image: &LabeledImage, cfg: &ModelConfig) -> Tensor<T> {
    let (h, w) = (image.height, image.width);
    let mut data = vec![T::zero(); 3 * h * w];
    for (i, px) in image.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = T::from_f64_lossy((px[c] as f64 - cfg.pixel_mean) / cfg.pixel_std);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("pixel count checked by LabeledImage")
}

/// Heatmap-derived network inputs for one image and one set of user inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInputs<T: Scalar> {
    /// `[C, H, W]` class-collated heatmaps (sigma of the LF or early-fusion path);
    /// `None` when the variant does not consume them.
    pub stack: Option<Tensor<T>>,
    /// Per input: `[H_f, W_f]` heatmap at feature resolution summing to 1, and its class.
    pub c3_maps: Vec<(Tensor<T>, usize)>,
}

impl<T: Scalar> PreparedInputs<T> {
    pub fn none() -> Self {
        Self {
            stack: None,
            c3_maps: Vec::new(),
        }
    }
}

/// Render and collate what `cfg.variant` needs from `inputs`.
pub fn prepare_inputs<T: Scalar>(
    cfg: &ModelConfig,
    num_classes: usize,
    height: usize,
    width: usize,
    inputs: &[UserInput],
) -> Result<PreparedInputs<T>> {
    for u in inputs {
        u.validate(width, height, num_classes)?;
    }
    let variant = cfg.variant;
    let stack = if variant.uses_lf() || variant.early_fusion() {
        let sigma = cfg.input_sigma();
        let maps = inputs
            .iter()
            .map(|u| render_gaussian(u.x, u.y, sigma, height, width))
            .collect::<std::result::Result<Vec<Heatmap>, _>>()?;
        let pairs: Vec<(&Heatmap, usize)> = maps.iter().zip(inputs).map(|(m, u)| (m, u.class_id)).collect();
        let stacked = collate_by_class(&pairs, num_classes, height, width)?;
        Some(Tensor::from_f64(&[num_classes, height, width], &stacked.to_chw())?)
    } else {
        None
    };
    let mut c3_maps = Vec::new();
    if variant.uses_c3() {
        let (hf, wf) = cfg.feature_size(height, width);
        for u in inputs {
            let full = render_gaussian(u.x, u.y, cfg.sigma_c3, height, width)?;
            let small = resize_normalize(&full, hf, wf)?;
            c3_maps.push((Tensor::from_f64(&[hf, wf], &small.values)?, u.class_id));
        }
    }
    Ok(PreparedInputs { stack, c3_maps })
}
