//! Training loop: per-step click synthesis, learning-rate schedule,
//! validation-driven checkpointing and the loss log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use c3det_autograd::{Graph, Tensor};
use c3det_core::simulate::{sample_training_inputs, SimulatedClick};
use c3det_core::{ClassCatalog, LabeledImage, RandomSource, UserInput};
use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointInfo};
use crate::config::ModelConfig;
use crate::detector::Detector;
use crate::error::{ModelError, Result};
use crate::evalharness::map_at_clicks;
use crate::inputs::{image_tensor, prepare_inputs};
use crate::loss::{total_loss, LossBreakdown};
use crate::network::forward;
use crate::params::{OptimizerConfig, Optimizer, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Epochs (0-based, ascending) at whose start the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub optimizer: OptimizerConfig,
    /// Seed for initialization, shuffling and augmentation.
    pub seed: u64,
    /// Seed for simulated clicks; defaults to `seed`.
    pub click_seed: Option<u64>,
    pub data_fraction: f64,
    pub augment_hflip: bool,
    /// Upper end of the per-image click-count draw.
    pub n_u_max: usize,
    /// Validate every this many epochs (0 disables validation).
    pub val_every: usize,
    /// Click budget of the validation measurement.
    pub val_clicks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 8,
            lr: 0.01,
            warmup_steps: 500,
            lr_decay_epochs: vec![8, 11],
            lr_decay_factor: 0.1,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            click_seed: None,
            data_fraction: 1.0,
            augment_hflip: true,
            n_u_max: 20,
            val_every: 1,
            val_clicks: 20,
        }
    }
}

impl TrainConfig {
    /// Schedule for the narrow desk-profile network on the synthetic
    /// 500-image training split (single CPU core).
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            lr: 2e-3,
            warmup_steps: 100,
            lr_decay_epochs: vec![20, 27],
            optimizer: OptimizerConfig::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 1e-4,
            },
            val_every: 5,
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" | "paper-profile" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(ModelError::Config(format!("unknown training profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("lr_decay_factor = {} must be positive", self.lr_decay_factor));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!("data_fraction = {} must lie in (0, 1]", self.data_fraction));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("lr_decay_epochs {:?} must be strictly ascending", self.lr_decay_epochs));
        }
        Ok(())
    }

    pub fn click_seed(&self) -> u64 {
        self.click_seed.unwrap_or(self.seed)
    }

    /// Learning rate for a step: linear warmup, then step decay by epoch.
    pub fn lr_at(&self, step: usize, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        let base = self.lr * self.lr_decay_factor.powi(decays as i32);
        if step < self.warmup_steps {
            base * (step + 1) as f64 / (self.warmup_steps + 1) as f64
        } else {
            base
        }
    }
}

/// Seeded shuffle, then the first `max(1, floor(fraction * N))` images.
pub fn subset(train: &[LabeledImage], fraction: f64, seed: u64) -> Result<Vec<LabeledImage>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ModelError::Config(format!("data fraction {fraction} outside (0, 1]")));
    }
    if train.is_empty() {
        return Ok(Vec::new());
    }
    let n = subset_size(train.len(), fraction);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut RandomSource::new(seed, "subset"));
    Ok(order[..n].iter().map(|&i| train[i].clone()).collect())
}

pub fn subset_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).clamp(1, n.max(1))
}

/// One row of the loss log (means over the images of a step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_box: f64,
    pub loss_uel: f64,
}

pub fn write_loss_log(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| ModelError::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub log: Vec<LossRow>,
    /// Histogram of the number of simulated clicks per training sample.
    pub click_histogram: Vec<usize>,
    /// Best validation mAP and the epoch it was reached at.
    pub best_val: Option<(usize, f64)>,
    pub final_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Loss and parameter gradients for one image.
pub fn image_gradients(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    num_classes: usize,
    image: &LabeledImage,
    clicks: &[SimulatedClick],
) -> Result<(LossBreakdown, BTreeMap<String, Tensor<f32>>)> {
    let inputs: Vec<UserInput> = clicks.iter().map(|c| c.input).collect();
    let prepared = prepare_inputs(cfg, num_classes, image.height, image.width, &inputs)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let out = forward(&mut g, &bound, cfg, num_classes, &image_tensor(image, cfg), &prepared)?;
    let (breakdown, grad) = total_loss(g.value(out.head), image, clicks, cfg, num_classes)?;
    let root = g.external_scalar(out.head, breakdown.total as f32, grad)?;
    let mut grads = g.backward(root)?;
    let mut named = BTreeMap::new();
    for (name, var) in bound.iter() {
        if let Some(t) = grads.take(*var) {
            named.insert(name.clone(), t);
        }
    }
    Ok((breakdown, named))
}

/// Everything `train` needs besides the configs.
pub struct TrainData<'a> {
    pub train: &'a [LabeledImage],
    pub val: &'a [LabeledImage],
    pub catalog: &'a ClassCatalog,
}

pub fn train(data: &TrainData<'_>, model_cfg: &ModelConfig, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    let images = subset(data.train, cfg.data_fraction, cfg.seed)?;
    if images.is_empty() {
        return Err(ModelError::Config("no training images".into()));
    }
    let c = data.catalog.len();
    let mut params = ParamStore::<f32>::init(model_cfg, c, cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut log = Vec::new();
    let mut click_histogram = vec![0usize; cfg.n_u_max + 1];
    let mut best_val: Option<(usize, f64)> = None;
    let mut best_checkpoint = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    }
    let checkpoint = |params: &ParamStore<f32>, info: CheckpointInfo, name: &str| -> Result<Option<PathBuf>> {
        match out_dir {
            Some(dir) => {
                let path = dir.join(name);
                Checkpoint::new(model_cfg, data.catalog, params, info).save(&path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    };

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut RandomSource::new(cfg.seed, format!("shuffle/{epoch}")));
        for batch in order.chunks(cfg.batch_size) {
            let lr = cfg.lr_at(step, epoch);
            let mut sum: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
            let mut mean = LossBreakdown::default();
            for &i in batch {
                let base = &images[i];
                let mut aug = RandomSource::new(cfg.seed, format!("hflip/{epoch}/{}", base.image_id));
                let flipped;
                let image = if cfg.augment_hflip && aug.random_bool(0.5) {
                    flipped = base.hflip();
                    &flipped
                } else {
                    base
                };
                let mut click_rng = RandomSource::new(cfg.click_seed(), format!("clicks/{epoch}/{}", base.image_id));
                let clicks = sample_training_inputs(image, cfg.n_u_max, &mut click_rng);
                click_histogram[clicks.len()] += 1;
                let (b, grads) = match image_gradients(&params, model_cfg, c, image, &clicks) {
                    Err(ModelError::NonFiniteLoss { term, .. }) => {
                        checkpoint(&params, CheckpointInfo { epoch, step, val_map: None }, "last_good.json")?;
                        return Err(ModelError::NonFiniteLoss { term, step });
                    }
                    other => other?,
                };
                mean.total += b.total;
                mean.cls += b.cls;
                mean.box_ += b.box_;
                mean.uel += b.uel;
                for (name, g) in grads {
                    match sum.get_mut(&name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            sum.insert(name, g);
                        }
                    }
                }
            }
            let n = batch.len() as f32;
            for g in sum.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v /= n);
            }
            if !sum.values().all(Tensor::all_finite) {
                checkpoint(&params, CheckpointInfo { epoch, step, val_map: None }, "last_good.json")?;
                return Err(ModelError::NonFiniteLoss { term: "gradient", step });
            }
            opt.step(&mut params, &sum, lr);
            let n = batch.len() as f64;
            log.push(LossRow {
                step,
                epoch,
                lr,
                loss_total: mean.total / n,
                loss_cls: mean.cls / n,
                loss_box: mean.box_ / n,
                loss_uel: mean.uel / n,
            });
            step += 1;
        }
        let last = log.last().expect("at least one step per epoch");
        info!(
            "{} epoch {epoch}: loss {:.4} (cls {:.4}, box {:.4}, uel {:.4}) lr {:.2e}",
            model_cfg.variant, last.loss_total, last.loss_cls, last.loss_box, last.loss_uel, last.lr
        );
        if cfg.val_every > 0 && !data.val.is_empty() && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs) {
            let det = Detector::new(model_cfg.clone(), data.catalog.clone(), params.clone())?;
            let v = map_at_clicks(&det, data.val, cfg.val_clicks, cfg.seed, 0)?;
            info!("{} epoch {epoch}: val mAP@0.5 at {} clicks = {v:.4}", model_cfg.variant, cfg.val_clicks);
            if best_val.is_none_or(|(_, b)| v > b) {
                best_val = Some((epoch, v));
                best_checkpoint = checkpoint(
                    &params,
                    CheckpointInfo {
                        epoch,
                        step,
                        val_map: Some(v),
                    },
                    "best.json",
                )?;
            }
        }
    }
    let final_checkpoint = checkpoint(
        &params,
        CheckpointInfo {
            epoch: cfg.epochs,
            step,
            val_map: None,
        },
        "final.json",
    )?;
    if let Some(dir) = out_dir {
        write_loss_log(&dir.join("loss_log.csv"), &log)?;
    }
    Ok(TrainOutcome {
        params,
        log,
        click_histogram,
        best_val,
        final_checkpoint,
        best_checkpoint,
    })
}
