//! Detection losses and the user-input enforcing loss.
//!
//! Losses are evaluated outside the autodiff tape on the head output; each
//! function returns its value together with the gradient with respect to the
//! head tensor, which the trainer attaches with `Graph::external_scalar`.

use c3det_autograd::{Scalar, Tensor};
use c3det_core::simulate::SimulatedClick;
use c3det_core::{BBox, GroundTruthObject, LabeledImage};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::decode::{box_channel, candidates, softmax, CLASS_START, OBJECTNESS};
use crate::error::{ModelError, Result};

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary focal loss on a logit and its derivative.
pub fn focal_loss(z: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = crate::decode::sigmoid(z);
    if positive {
        let log_p = -softplus(-z);
        let w = (1.0 - p).powf(gamma);
        (-alpha * w * log_p, alpha * w * (gamma * p * log_p - (1.0 - p)))
    } else {
        let log_q = -softplus(z);
        let w = p.powf(gamma);
        (-(1.0 - alpha) * w * log_q, (1.0 - alpha) * w * (p - gamma * (1.0 - p) * log_q))
    }
}

/// Softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    let mut grad = p;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Multi-class focal loss `-(1 - p_t)^gamma log p_t` and its gradient.
pub fn softmax_focal(logits: &[f64], target: usize, gamma: f64) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let q = p[target].max(f64::MIN_POSITIVE);
    let log_q = q.ln();
    let loss = -(1.0 - q).powf(gamma) * log_q;
    let dq = gamma * (1.0 - q).powf(gamma - 1.0) * q * log_q - (1.0 - q).powf(gamma);
    let grad = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| dq * (if j == target { 1.0 } else { 0.0 } - pj))
        .collect();
    (loss, grad)
}

/// The per-pair criterion of the user-input enforcing loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UelCriterion {
    #[default]
    CrossEntropy,
    Focal {
        gamma: f64,
    },
}

impl UelCriterion {
    fn eval(self, logits: &[f64], target: usize) -> (f64, Vec<f64>) {
        match self {
            UelCriterion::CrossEntropy => cross_entropy(logits, target),
            UelCriterion::Focal { gamma } => softmax_focal(logits, target, gamma),
        }
    }
}

/// A prediction as seen by the UEL: a detached box and live class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct UelPrediction {
    pub bbox: BBox,
    pub class_logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UelValue {
    pub value: f64,
    /// Gradient w.r.t. each prediction's class logits.
    pub grads: Vec<Vec<f64>>,
    /// Number of (prediction, input) pairs with nonzero overlap.
    pub pairs: usize,
}

/// `sum_j sum_k 1[IoU(pred_j, gt(k)) > 0] * l(logits_j, class_k)`.
pub fn uel_loss(preds: &[UelPrediction], clicks: &[SimulatedClick], gt: &[GroundTruthObject], ell: UelCriterion) -> Result<UelValue> {
    let mut value = 0.0;
    let mut grads: Vec<Vec<f64>> = preds.iter().map(|p| vec![0.0; p.class_logits.len()]).collect();
    let mut pairs = 0;
    for (k, click) in clicks.iter().enumerate() {
        let target = gt.get(click.gt_index).ok_or(ModelError::MissingAssociation { index: k })?;
        for (j, pred) in preds.iter().enumerate() {
            if pred.bbox.iou(&target.bbox) > 0.0 {
                let (l, g) = ell.eval(&pred.class_logits, click.input.class_id);
                value += l;
                grads[j].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                pairs += 1;
            }
        }
    }
    Ok(UelValue { value, grads, pairs })
}

/// For each cell, the ground-truth index it is responsible for.
///
/// Each object claims the cell containing its center plus those 3x3
/// neighbors whose cell centers fall inside the box. Objects are processed
/// smallest first, so a contested cell goes to the smaller object.
pub fn assign_targets(gt: &[GroundTruthObject], stride: usize, h: usize, w: usize) -> Vec<Option<usize>> {
    let s = stride as f64;
    let mut order: Vec<usize> = (0..gt.len()).collect();
    order.sort_by(|&a, &b| gt[a].bbox.area().total_cmp(&gt[b].bbox.area()));
    let mut owner = vec![None; h * w];
    for i in order {
        let b = &gt[i].bbox;
        let (cx, cy) = b.center();
        let gx = ((cx / s).floor() as isize).clamp(0, w as isize - 1);
        let gy = ((cy / s).floor() as isize).clamp(0, h as isize - 1);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (gx + dx, gy + dy);
                if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                    continue;
                }
                let center = (x as f64 + 0.5) * s;
                let middle = (y as f64 + 0.5) * s;
                let is_center = dx == 0 && dy == 0;
                let cell = y as usize * w + x as usize;
                if (is_center || b.contains(center, middle)) && owner[cell].is_none() {
                    owner[cell] = Some(i);
                }
            }
        }
    }
    owner
}

/// Regression target `(dx, dy, log w, log h)` of an object for a cell.
pub fn box_target(b: &BBox, cell: usize, stride: usize, w: usize) -> [f64; 4] {
    let s = stride as f64;
    let (cx, cy) = b.center();
    let (gx, gy) = ((cell % w) as f64 + 0.5, (cell / w) as f64 + 0.5);
    [cx / s - gx, cy / s - gy, (b.width() / s).ln(), (b.height() / s).ln()]
}

/// Weighted loss terms of one image. `total = cls + box_ + uel`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub uel: f64,
    pub num_pos: usize,
}

/// Full training loss and its gradient w.r.t. the head output.
///
/// `cls` = (objectness focal loss over all cells + class cross-entropy on
/// positive cells) / N, `box_` = weight * L1 on positive cells / N, and
/// `uel` = lambda * UEL / N, with N = max(1, positive cells).
pub fn total_loss<T: Scalar>(
    head: &Tensor<T>,
    gt: &LabeledImage,
    clicks: &[SimulatedClick],
    cfg: &ModelConfig,
    num_classes: usize,
) -> Result<(LossBreakdown, Tensor<T>)> {
    let (h, w) = (head.dim(1), head.dim(2));
    let cells = h * w;
    let val = |c: usize, cell: usize| head.data()[c * cells + cell].to_f64_lossy();
    let owner = assign_targets(&gt.objects, cfg.stride, h, w);
    let num_pos = owner.iter().filter(|o| o.is_some()).count();
    let norm = num_pos.max(1) as f64;
    let mut grad = vec![0.0f64; head.len()];

    let mut cls = 0.0;
    for (cell, own) in owner.iter().enumerate() {
        let (l, d) = focal_loss(val(OBJECTNESS, cell), own.is_some(), cfg.focal_alpha, cfg.focal_gamma);
        cls += l;
        grad[OBJECTNESS * cells + cell] = d / norm;
    }
    let bc = box_channel(num_classes);
    let mut box_sum = 0.0;
    for (cell, own) in owner.iter().enumerate() {
        let Some(i) = *own else { continue };
        let obj = &gt.objects[i];
        let logits: Vec<f64> = (0..num_classes).map(|c| val(CLASS_START + c, cell)).collect();
        let (l, d) = cross_entropy(&logits, obj.class_id);
        cls += l;
        for (c, dc) in d.into_iter().enumerate() {
            grad[(CLASS_START + c) * cells + cell] += dc / norm;
        }
        let target = box_target(&obj.bbox, cell, cfg.stride, w);
        for (k, t) in target.into_iter().enumerate() {
            let diff = val(bc + k, cell) - t;
            box_sum += diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[(bc + k) * cells + cell] += cfg.box_loss_weight * sign / norm;
        }
    }
    let cls = cls / norm;
    let box_ = cfg.box_loss_weight * box_sum / norm;

    let lambda = cfg.effective_lambda_uel();
    let mut uel = 0.0;
    if lambda > 0.0 && !clicks.is_empty() {
        let cands = candidates(head, num_classes, cfg.stride, gt.width, gt.height, &cfg.decode, cfg.uel_score_floor);
        let preds: Vec<UelPrediction> = cands
            .iter()
            .map(|c| UelPrediction {
                bbox: c.bbox,
                class_logits: c.class_logits.clone(),
            })
            .collect();
        let v = uel_loss(&preds, clicks, &gt.objects, UelCriterion::CrossEntropy)?;
        uel = lambda * v.value / norm;
        for (cand, g) in cands.iter().zip(&v.grads) {
            for (c, &dc) in g.iter().enumerate() {
                grad[(CLASS_START + c) * cells + cand.cell] += lambda * dc / norm;
            }
        }
    }

    for (term, v) in [("classification", cls), ("box", box_), ("uel", uel)] {
        if !v.is_finite() {
            return Err(ModelError::NonFiniteLoss { term, step: 0 });
        }
    }
    let breakdown = LossBreakdown {
        total: cls + box_ + uel,
        cls,
        box_,
        uel,
        num_pos,
    };
    let grad = Tensor::from_vec(head.shape(), grad.into_iter().map(T::from_f64_lossy).collect())?;
    Ok((breakdown, grad))
}
