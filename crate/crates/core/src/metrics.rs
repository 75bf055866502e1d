//! Detection metrics: IoU, all-point interpolated AP, and mAP over one or
//! several IoU thresholds (COCO-style `[.50:.05:.95]`).
//!
//! Classes without any ground-truth instance are left out of the class mean.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{BBox, Detection, GroundTruthObject};

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// The ten COCO thresholds `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Area under the all-point interpolated precision/recall curve.
///
/// `tp` flags are in ranked order; `num_gt` is the number of positives.
pub fn interpolated_ap(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// Greedy matching in descending score order (stable for ties). A detection
/// is a true positive when some still-unmatched ground truth of its class
/// overlaps it with IoU >= `iou_thr`; the highest-IoU one is consumed.
fn match_ranked(ranked: &[(usize, &Detection)], gts_per_image: &[Vec<&GroundTruthObject>], iou_thr: f64) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = gts_per_image.iter().map(|g| vec![false; g.len()]).collect();
    ranked
        .iter()
        .map(|&(img, det)| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts_per_image[img].iter().enumerate() {
                if used[img][gi] || gt.class_id != det.class_id {
                    continue;
                }
                let o = det.bbox.iou(&gt.bbox);
                if o >= iou_thr && best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            match best {
                Some((gi, _)) => {
                    used[img][gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

fn rank<'a>(dets: impl Iterator<Item = (usize, &'a Detection)>) -> Vec<(usize, &'a Detection)> {
    let mut ranked: Vec<_> = dets.collect();
    // Stable sort keeps input order among equal scores.
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    ranked
}

/// AP of one class on a single image's worth of detections and ground truth.
/// Only detections and ground truth of `class_id` take part.
pub fn average_precision_for_class(dets: &[Detection], gts: &[GroundTruthObject], class_id: usize, iou_thr: f64) -> f64 {
    let gt: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.class_id == class_id).collect();
    let ranked = rank(dets.iter().filter(|d| d.class_id == class_id).map(|d| (0, d)));
    let tp = match_ranked(&ranked, &[gt.clone()], iou_thr);
    interpolated_ap(&tp, gt.len())
}

/// Class-agnostic form: every detection competes for ground truth of its own
/// class, and the PR curve pools all of them.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthObject], iou_thr: f64) -> f64 {
    let ranked = rank(dets.iter().map(|d| (0, d)));
    let gt: Vec<&GroundTruthObject> = gts.iter().collect();
    let tp = match_ranked(&ranked, &[gt], iou_thr);
    interpolated_ap(&tp, gts.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// AP per class (averaged over thresholds), only for classes with ground truth.
    pub per_class_ap: BTreeMap<usize, f64>,
    pub map_value: f64,
    pub iou_thresholds: Vec<f64>,
}

/// mAP over a set of images. Both maps are keyed by image id; every
/// detection image id must have ground truth (possibly empty).
pub fn map_at(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &BTreeMap<String, Vec<GroundTruthObject>>,
    thresholds: &[f64],
) -> Result<EvalResult> {
    if thresholds.is_empty() {
        return Err(CoreError::InvalidParameter("map_at needs at least one IoU threshold".into()));
    }
    if let Some(unknown) = dets.keys().find(|k| !gts.contains_key(*k)) {
        return Err(CoreError::UnknownImage(unknown.clone()));
    }
    let image_ids: Vec<&String> = gts.keys().collect();
    let mut classes: Vec<usize> = gts.values().flatten().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class_ap = BTreeMap::new();
    for &c in &classes {
        let gts_c: Vec<Vec<&GroundTruthObject>> = image_ids
            .iter()
            .map(|id| gts[*id].iter().filter(|g| g.class_id == c).collect())
            .collect();
        let num_gt: usize = gts_c.iter().map(Vec::len).sum();
        let ranked = rank(image_ids.iter().enumerate().flat_map(|(i, id)| {
            dets.get(*id)
                .into_iter()
                .flatten()
                .filter(move |d| d.class_id == c)
                .map(move |d| (i, d))
        }));
        let mean_ap = thresholds
            .iter()
            .map(|&t| interpolated_ap(&match_ranked(&ranked, &gts_c, t), num_gt))
            .sum::<f64>()
            / thresholds.len() as f64;
        per_class_ap.insert(c, mean_ap);
    }
    let map_value = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    Ok(EvalResult {
        per_class_ap,
        map_value,
        iou_thresholds: thresholds.to_vec(),
    })
}

/// One row of a results CSV: `(clicks, session, class_id | "mAP", value)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub clicks: usize,
    pub session: usize,
    pub class_id: Option<usize>,
    pub value: f64,
}

impl ResultRow {
    pub fn rows_for(clicks: usize, session: usize, result: &EvalResult) -> Vec<ResultRow> {
        let mut rows: Vec<ResultRow> = result
            .per_class_ap
            .iter()
            .map(|(&c, &v)| ResultRow {
                clicks,
                session,
                class_id: Some(c),
                value: v,
            })
            .collect();
        rows.push(ResultRow {
            clicks,
            session,
            class_id: None,
            value: result.map_value,
        });
        rows
    }
}

pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["clicks", "session", "class_id", "value"])?;
    for r in rows {
        let class = r.class_id.map_or_else(|| "mAP".to_string(), |c| c.to_string());
        w.write_record([r.clicks.to_string(), r.session.to_string(), class, format!("{:.12}", r.value)])?;
    }
    w.flush().map_err(|e| CoreError::Csv(e.into()))?;
    Ok(())
}
