//! Turning dense head output into scored boxes.

use std::cmp::Ordering;

use c3det_autograd::{Scalar, Tensor};
use c3det_core::{BBox, Detection};

use crate::config::DecodeConfig;

/// Channel offsets inside the head output.
pub const OBJECTNESS: usize = 0;
pub const CLASS_START: usize = 1;

pub fn box_channel(num_classes: usize) -> usize {
    CLASS_START + num_classes
}

/// Logistic function, stable for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// A decoded cell before non-maximum suppression.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Row-major cell index `y * W_f + x`.
    pub cell: usize,
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
    pub class_logits: Vec<f64>,
}

/// Read-only view of a `[1 + C + 4, H_f, W_f]` head tensor.
pub struct HeadView<'a, T> {
    data: &'a [T],
    pub num_classes: usize,
    pub h: usize,
    pub w: usize,
}

impl<'a, T: Scalar> HeadView<'a, T> {
    pub fn new(head: &'a Tensor<T>, num_classes: usize) -> Self {
        let s = head.shape();
        assert_eq!(s[0], 1 + num_classes + 4, "head has {} channels for {num_classes} classes", s[0]);
        Self {
            data: head.data(),
            num_classes,
            h: s[1],
            w: s[2],
        }
    }

    pub fn at(&self, channel: usize, cell: usize) -> f64 {
        self.data[channel * self.h * self.w + cell].to_f64_lossy()
    }

    pub fn class_logits(&self, cell: usize) -> Vec<f64> {
        (0..self.num_classes).map(|c| self.at(CLASS_START + c, cell)).collect()
    }

    /// Decoded box of a cell, clipped to the image; `None` if it collapses.
    pub fn cell_box(&self, cell: usize, stride: usize, max_log_size: f64, width: usize, height: usize) -> Option<BBox> {
        let s = stride as f64;
        let (cy, cx) = ((cell / self.w) as f64, (cell % self.w) as f64);
        let b = box_channel(self.num_classes);
        let x = (cx + 0.5) * s + self.at(b, cell) * s;
        let y = (cy + 0.5) * s + self.at(b + 1, cell) * s;
        let bw = s * self.at(b + 2, cell).clamp(-max_log_size, max_log_size).exp();
        let bh = s * self.at(b + 3, cell).clamp(-max_log_size, max_log_size).exp();
        let x0 = (x - bw / 2.0).max(0.0);
        let y0 = (y - bh / 2.0).max(0.0);
        let x1 = (x + bw / 2.0).min(width as f64);
        let y1 = (y + bh / 2.0).min(height as f64);
        BBox::new(x0, y0, x1, y1).ok()
    }
}

/// All cells scoring at least `floor`, in cell order. Score is
/// `sigmoid(objectness) * max softmax(class)`.
pub fn candidates<T: Scalar>(
    head: &Tensor<T>,
    num_classes: usize,
    stride: usize,
    width: usize,
    height: usize,
    cfg: &DecodeConfig,
    floor: f64,
) -> Vec<Candidate> {
    let view = HeadView::new(head, num_classes);
    let mut out = Vec::new();
    for cell in 0..view.h * view.w {
        let obj = sigmoid(view.at(OBJECTNESS, cell));
        if obj < floor {
            continue;
        }
        let logits = view.class_logits(cell);
        let probs = softmax(&logits);
        let (class_id, p) = probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, v)| if v > best.1 { (c, v) } else { best });
        let score = obj * p;
        if score < floor {
            continue;
        }
        if let Some(bbox) = view.cell_box(cell, stride, cfg.max_log_size, width, height) {
            out.push(Candidate {
                cell,
                bbox,
                class_id,
                score,
                class_logits: logits,
            });
        }
    }
    out
}

/// Class-wise greedy NMS. Input order breaks score ties; output is sorted by
/// descending score and truncated to `top_n`.
pub fn nms(dets: &[Detection], iou_thr: f64, top_n: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept.iter().any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) > iou_thr) {
            continue;
        }
        kept.push(d);
        if kept.len() == top_n {
            break;
        }
    }
    kept
}

/// Head output to final detections.
pub fn decode<T: Scalar>(head: &Tensor<T>, num_classes: usize, stride: usize, width: usize, height: usize, cfg: &DecodeConfig) -> Vec<Detection> {
    let dets: Vec<Detection> = candidates(head, num_classes, stride, width, height, cfg, cfg.score_thr)
        .into_iter()
        .map(|c| Detection {
            bbox: c.bbox,
            class_id: c.class_id,
            score: c.score,
        })
        .collect();
    nms(&dets, cfg.nms_iou, cfg.top_n)
}
