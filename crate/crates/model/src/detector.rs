//! Inference wrapper around a parameter set.

use std::path::Path;

use c3det_autograd::{Graph, Tensor};
use c3det_core::{ClassCatalog, Detection, LabeledImage, UserInput};

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::decode::decode;
use crate::error::Result;
use crate::inputs::{image_tensor, prepare_inputs};
use crate::network::{backbone_forward, forward, forward_from_features};
use crate::params::ParamStore;

/// A trained (or freshly initialized) model ready for inference.
#[derive(Clone, Debug)]
pub struct Detector {
    config: ModelConfig,
    catalog: ClassCatalog,
    params: ParamStore<f32>,
}

impl Detector {
    pub fn new(config: ModelConfig, catalog: ClassCatalog, params: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config, catalog.len())?;
        Ok(Self { config, catalog, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::new(ckpt.config.clone(), ckpt.catalog.clone(), ckpt.param_store()?)
    }

    pub fn load(path: &Path, expected: Option<&ClassCatalog>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, expected)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.catalog.len()
    }

    /// Backbone features `F_I`, or `None` when they depend on the user inputs
    /// (early fusion) and so cannot be reused across click counts.
    pub fn features(&self, image: &LabeledImage) -> Result<Option<Tensor<f32>>> {
        if self.config.variant.early_fusion() {
            return Ok(None);
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(image_tensor(image, &self.config));
        let f = backbone_forward(&mut g, &p, &self.config, self.num_classes(), x, None)?;
        Ok(Some(g.value(f).clone()))
    }

    /// Raw `[1 + C + 4, H_f, W_f]` head output. `features` must come from
    /// [`Detector::features`] on the same image when given.
    pub fn head(&self, image: &LabeledImage, inputs: &[UserInput], features: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        let c = self.num_classes();
        let prepared = prepare_inputs(&self.config, c, image.height, image.width, inputs)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = match features {
            Some(f) => {
                let f_i = g.constant(f.clone());
                forward_from_features(&mut g, &p, &self.config, c, f_i, &prepared)?
            }
            None => forward(&mut g, &p, &self.config, c, &image_tensor(image, &self.config), &prepared)?,
        };
        Ok(g.value(out.head).clone())
    }

    pub fn decode(&self, head: &Tensor<f32>, image: &LabeledImage) -> Vec<Detection> {
        decode(head, self.num_classes(), self.config.stride, image.width, image.height, &self.config.decode)
    }

    /// Detections for an image given the user inputs so far.
    pub fn infer(&self, image: &LabeledImage, inputs: &[UserInput]) -> Result<Vec<Detection>> {
        self.infer_cached(image, inputs, None)
    }

    pub fn infer_cached(&self, image: &LabeledImage, inputs: &[UserInput], features: Option<&Tensor<f32>>) -> Result<Vec<Detection>> {
        let head = self.head(image, inputs, features)?;
        Ok(self.decode(&head, image))
    }
}
