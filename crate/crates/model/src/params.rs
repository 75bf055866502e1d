//! Named parameter tensors, their initialization, and the optimizers.

use std::collections::BTreeMap;

use c3det_autograd::{Graph, Scalar, Tensor, Var};
use c3det_core::RandomSource;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// He-normal with the given fan-in, times a gain.
    He { fan_in: usize, gain: f64 },
    Const(f64),
}

/// Parameter names, shapes and initializers for a configuration.
fn layout(cfg: &ModelConfig, num_classes: usize) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut conv_stack = |prefix: &str, c_in: usize, width: usize, with_norm: bool| {
        let mut c = c_in;
        for i in 0..cfg.blocks {
            out.push((format!("{prefix}.conv{i}.weight"), vec![width, c, 3, 3], Init::He { fan_in: c * 9, gain: 1.0 }));
            // A bias ahead of instance normalization is cancelled by it; beta takes its place.
            if !with_norm {
                out.push((format!("{prefix}.conv{i}.bias"), vec![width], Init::Const(0.0)));
            }
            if with_norm {
                out.push((format!("{prefix}.norm{i}.gamma"), vec![width], Init::Const(1.0)));
                out.push((format!("{prefix}.norm{i}.beta"), vec![width], Init::Const(0.0)));
            }
            c = width;
        }
    };
    let image_channels = if cfg.variant.early_fusion() { 3 + num_classes } else { 3 };
    conv_stack("backbone", image_channels, cfg.backbone_channels, true);
    if cfg.variant.uses_lf() {
        conv_stack("lf", num_classes, cfg.lf_channels, false);
    }
    let fuse_in = cfg.backbone_channels + cfg.lf_channels + num_classes;
    let p = cfg.fusion_proj_channels;
    out.push(("fuse.weight".into(), vec![p, fuse_in, 1, 1], Init::He { fan_in: fuse_in, gain: 1.0 }));
    out.push(("fuse.bias".into(), vec![p], Init::Const(0.0)));
    out.push(("head.conv.weight".into(), vec![p, p, 3, 3], Init::He { fan_in: p * 9, gain: 1.0 }));
    out.push(("head.conv.bias".into(), vec![p], Init::Const(0.0)));
    let head_out = 1 + num_classes + 4;
    out.push(("head.out.weight".into(), vec![head_out, p, 1, 1], Init::He { fan_in: p, gain: 0.1 }));
    out.push(("head.out.bias".into(), vec![head_out], Init::Const(0.0)));
    out
}

/// Prior probability of objectness at initialization.
const OBJECTNESS_PRIOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Fresh parameters for `cfg`, drawn from stream `"init/{name}"` of `seed`.
    pub fn init(cfg: &ModelConfig, num_classes: usize, seed: u64) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(cfg, num_classes) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Const(v) => vec![T::from_f64_lossy(v); n],
                Init::He { fan_in, gain } => {
                    let mut rng = RandomSource::new(seed, format!("init/{name}"));
                    let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect()
                }
            };
            tensors.insert(name, Tensor::from_vec(&shape, data).expect("layout shapes are consistent"));
        }
        // Raw correlation maps are O(backbone_channels) in magnitude; start
        // their projection weights at the scale of the other fused channels.
        let fuse = tensors.get_mut("fuse.weight").expect("fuse layer exists");
        let fuse_in = fuse.dim(1);
        let c3_start = cfg.backbone_channels + cfg.lf_channels;
        let damp = T::from_f64_lossy(1.0 / cfg.backbone_channels as f64);
        for (i, w) in fuse.data_mut().iter_mut().enumerate() {
            if i % fuse_in >= c3_start {
                *w *= damp;
            }
        }
        let bias = tensors.get_mut("head.out.bias").expect("head exists");
        bias.data_mut()[0] = T::from_f64_lossy(-((1.0 - OBJECTNESS_PRIOR) / OBJECTNESS_PRIOR).ln());
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    /// Check that names and shapes match the layout of `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig, num_classes: usize) -> Result<()> {
        let expected = layout(cfg, num_classes);
        for (name, shape, _) in &expected {
            match self.tensors.get(name) {
                None => return Err(ModelError::MissingParameter(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::Config(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if self.tensors.len() != expected.len() {
            let extra: Vec<&String> = self.tensors.keys().filter(|k| !expected.iter().any(|(n, _, _)| n == *k)).collect();
            return Err(ModelError::Config(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Place every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| {
                    let var = if trainable { g.parameter(v.clone()) } else { g.constant(v.clone()) };
                    (k.clone(), var)
                })
                .collect(),
        }
    }
}

/// Graph variables of a bound [`ParamStore`], by parameter name.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { momentum: f64, weight_decay: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Stateful first-order optimizer over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            steps: 0,
        }
    }

    /// Apply one update. Weight decay touches convolution weights only.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>, lr: f64) {
        self.steps += 1;
        for (name, p) in params.tensors.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let decays = name.ends_with(".weight");
            let n = p.len();
            match self.cfg {
                OptimizerConfig::Sgd { momentum, weight_decay } => {
                    let wd = if decays { weight_decay as f32 } else { 0.0 };
                    let v = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let (mu, lr) = (momentum as f32, lr as f32);
                    for ((w, &gw), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = mu * *vi + gw + wd * *w;
                        *w -= lr * *vi;
                    }
                }
                OptimizerConfig::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let wd = if decays { weight_decay as f32 } else { 0.0 };
                    let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let s = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let (b1, b2) = (beta1 as f32, beta2 as f32);
                    let c1 = 1.0 - beta1.powi(self.steps as i32);
                    let c2 = 1.0 - beta2.powi(self.steps as i32);
                    let step = (lr * c2.sqrt() / c1) as f32;
                    for (((w, &gw), mi), si) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *mi = b1 * *mi + (1.0 - b1) * gw;
                        *si = b2 * *si + (1.0 - b2) * gw * gw;
                        *w -= step * *mi / (si.sqrt() + eps as f32) + (lr as f32) * wd * *w;
                    }
                }
            }
        }
    }
}
