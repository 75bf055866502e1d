//! Click-protocol evaluation: mAP-vs-clicks curves over repeated sessions,
//! the passthrough baseline, and multi-variant comparison runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use c3det_autograd::Tensor;
use c3det_core::dataset::write_bytes_atomic;
use c3det_core::metrics::{map_at, write_results_csv, ResultRow};
use c3det_core::simulate::{draw_session, SimulatedClick};
use c3det_core::{Detection, GroundTruthObject, LabeledImage, RandomSource, UserInput};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::detector::Detector;
use crate::error::{ModelError, Result};

pub const MAP_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sessions: usize,
    pub max_clicks: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sessions: 5,
            max_clicks: 20,
            seed: 0,
        }
    }
}

/// What is being evaluated: a model, or the passthrough rule applied to a
/// click-agnostic model's detections.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    Model(&'a Detector),
    Passthrough(&'a Detector),
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Model(d) => d.config().variant.to_string(),
            Method::Passthrough(_) => PASSTHROUGH.to_string(),
        }
    }
}

pub const PASSTHROUGH: &str = "passthrough";

/// The click sequence of one image in one session: stream `"{image_id}/{session}"`.
pub fn session_clicks(image: &LabeledImage, max_clicks: usize, seed: u64, session: usize) -> Vec<SimulatedClick> {
    let mut rng = RandomSource::new(seed, format!("{}/{session}", image.image_id));
    draw_session(image, max_clicks, &mut rng)
}

/// Relabel, for every click, the highest-scoring detection whose box
/// contains the click: its class becomes the click's class and its score 1.
/// Clicks outside every detection are ignored; earlier detections in the
/// list win score ties.
pub fn passthrough(dets: &[Detection], inputs: &[UserInput]) -> Vec<Detection> {
    let mut out = dets.to_vec();
    for u in inputs {
        let mut best: Option<usize> = None;
        for (i, d) in dets.iter().enumerate() {
            if d.bbox.contains(u.x, u.y) && best.is_none_or(|b| d.score > dets[b].score) {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            out[i].class_id = u.class_id;
            out[i].score = 1.0;
        }
    }
    out
}

/// Detections of every image at every click count `0..=max_clicks` of one session.
fn session_detections(method: Method<'_>, images: &[LabeledImage], cfg: &EvalConfig, session: usize) -> Result<Vec<Vec<Vec<Detection>>>> {
    let mut per_t: Vec<Vec<Vec<Detection>>> = vec![Vec::with_capacity(images.len()); cfg.max_clicks + 1];
    for image in images {
        let clicks: Vec<UserInput> = session_clicks(image, cfg.max_clicks, cfg.seed, session).into_iter().map(|c| c.input).collect();
        match method {
            Method::Passthrough(det) => {
                let base = det.infer(image, &[])?;
                for (t, slot) in per_t.iter_mut().enumerate() {
                    slot.push(passthrough(&base, &clicks[..t.min(clicks.len())]));
                }
            }
            Method::Model(det) => {
                let features: Option<Tensor<f32>> = det.features(image)?;
                let uses_inputs = det.config().variant.uses_inputs();
                let mut last: Option<Vec<Detection>> = None;
                for (t, slot) in per_t.iter_mut().enumerate() {
                    // Beyond the available clicks (or for click-agnostic
                    // models) the inputs do not change, so neither does the
                    // output.
                    let fresh = last.is_none() || (uses_inputs && t <= clicks.len());
                    if fresh {
                        last = Some(det.infer_cached(image, &clicks[..t.min(clicks.len())], features.as_ref())?);
                    }
                    slot.push(last.clone().expect("computed above"));
                }
            }
        }
    }
    Ok(per_t)
}

fn ground_truth(images: &[LabeledImage]) -> BTreeMap<String, Vec<GroundTruthObject>> {
    images.iter().map(|i| (i.image_id.clone(), i.objects.clone())).collect()
}

fn keyed(images: &[LabeledImage], dets: Vec<Vec<Detection>>) -> BTreeMap<String, Vec<Detection>> {
    images.iter().map(|i| i.image_id.clone()).zip(dets).collect()
}

/// `(clicks, session, mAP)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub clicks: usize,
    pub session: usize,
    pub map: f64,
}

/// One session: mAP@0.5 over the whole image set at each click count.
pub fn run_session(method: Method<'_>, images: &[LabeledImage], cfg: &EvalConfig, session: usize) -> Result<(Vec<CurvePoint>, Vec<ResultRow>)> {
    let gts = ground_truth(images);
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for (t, dets) in session_detections(method, images, cfg, session)?.into_iter().enumerate() {
        let r = map_at(&keyed(images, dets), &gts, &[MAP_IOU])?;
        points.push(CurvePoint {
            clicks: t,
            session,
            map: r.map_value,
        });
        rows.extend(ResultRow::rows_for(t, session, &r));
    }
    Ok((points, rows))
}

/// Mean and population standard deviation over sessions, per click count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub clicks: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolResult {
    pub name: String,
    pub points: Vec<CurvePoint>,
    pub summary: Vec<SummaryRow>,
    pub per_class: Vec<ResultRow>,
}

impl ProtocolResult {
    pub fn mean_at(&self, clicks: usize) -> Option<f64> {
        self.summary.iter().find(|r| r.clicks == clicks).map(|r| r.mean)
    }
}

pub fn summarize(points: &[CurvePoint], max_clicks: usize) -> Vec<SummaryRow> {
    (0..=max_clicks)
        .map(|t| {
            let v: Vec<f64> = points.iter().filter(|p| p.clicks == t).map(|p| p.map).collect();
            let n = v.len().max(1) as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            SummaryRow {
                clicks: t,
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// `cfg.sessions` independent sessions aggregated per click count.
pub fn run_protocol(method: Method<'_>, images: &[LabeledImage], cfg: &EvalConfig) -> Result<ProtocolResult> {
    let mut points = Vec::new();
    let mut per_class = Vec::new();
    for s in 0..cfg.sessions {
        let (p, r) = run_session(method, images, cfg, s)?;
        info!(
            "{} session {s}: mAP {:.4} at 0 clicks, {:.4} at {} clicks",
            method.name(),
            p.first().map_or(0.0, |p| p.map),
            p.last().map_or(0.0, |p| p.map),
            cfg.max_clicks
        );
        points.extend(p);
        per_class.extend(r);
    }
    Ok(ProtocolResult {
        name: method.name(),
        summary: summarize(&points, cfg.max_clicks),
        points,
        per_class,
    })
}

/// mAP@0.5 of one session at exactly `clicks` clicks per image.
pub fn map_at_clicks(det: &Detector, images: &[LabeledImage], clicks: usize, seed: u64, session: usize) -> Result<f64> {
    let mut dets = Vec::with_capacity(images.len());
    for image in images {
        let c: Vec<UserInput> = session_clicks(image, clicks, seed, session).into_iter().map(|c| c.input).collect();
        dets.push(det.infer(image, &c)?);
    }
    Ok(map_at(&keyed(images, dets), &ground_truth(images), &[MAP_IOU])?.map_value)
}

/// Share of clicks after which some prediction overlapping the clicked object
/// with IoU > 0.5 carries the clicked class. Each image is evaluated once
/// with its full session-0 click sequence.
pub fn click_consistency(det: &Detector, images: &[LabeledImage], max_clicks: usize, seed: u64) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for image in images {
        let clicks = session_clicks(image, max_clicks, seed, 0);
        let inputs: Vec<UserInput> = clicks.iter().map(|c| c.input).collect();
        let dets = det.infer(image, &inputs)?;
        for c in &clicks {
            let gt = &image.objects[c.gt_index];
            total += 1;
            if dets.iter().any(|d| d.class_id == c.input.class_id && d.bbox.iou(&gt.bbox) > 0.5) {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| ModelError::io(path, e))?))
}

/// `{name}_runs.csv`, `{name}_summary.csv` and `{name}_per_class.csv` in `dir`.
pub fn write_protocol_csvs(dir: &Path, result: &ProtocolResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    let runs = dir.join(format!("{}_runs.csv", result.name));
    let mut w = create(&runs)?;
    writeln!(w, "clicks,session,map").map_err(|e| ModelError::io(&runs, e))?;
    for p in &result.points {
        writeln!(w, "{},{},{:.12}", p.clicks, p.session, p.map).map_err(|e| ModelError::io(&runs, e))?;
    }
    w.flush().map_err(|e| ModelError::io(&runs, e))?;

    let summary = dir.join(format!("{}_summary.csv", result.name));
    let mut w = create(&summary)?;
    writeln!(w, "clicks,mean,std").map_err(|e| ModelError::io(&summary, e))?;
    for r in &result.summary {
        writeln!(w, "{},{:.12},{:.12}", r.clicks, r.mean, r.std).map_err(|e| ModelError::io(&summary, e))?;
    }
    w.flush().map_err(|e| ModelError::io(&summary, e))?;

    let per_class = dir.join(format!("{}_per_class.csv", result.name));
    write_results_csv(create(&per_class)?, &result.per_class)?;
    Ok(vec![runs, summary, per_class])
}

/// Evaluate several methods with identical session seeds (paired comparison),
/// writing per-method CSVs, a combined summary and a curve plot to `out_dir`.
///
/// `passthrough` is evaluated on the `detector_only` checkpoint.
pub fn run_matrix(
    methods: &[String],
    checkpoints: &BTreeMap<Variant, Detector>,
    images: &[LabeledImage],
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<Vec<ProtocolResult>> {
    let mut results = Vec::new();
    for name in methods {
        let method = if name == PASSTHROUGH {
            let base = checkpoints
                .get(&Variant::DetectorOnly)
                .ok_or_else(|| ModelError::MissingCheckpoint(format!("{PASSTHROUGH} (needs {})", Variant::DetectorOnly)))?;
            Method::Passthrough(base)
        } else {
            let v: Variant = name.parse()?;
            Method::Model(checkpoints.get(&v).ok_or_else(|| ModelError::MissingCheckpoint(v.to_string()))?)
        };
        let r = run_protocol(method, images, cfg)?;
        write_protocol_csvs(out_dir, &r)?;
        results.push(r);
    }
    write_matrix_summary(&out_dir.join("matrix_summary.csv"), &results)?;
    plot_curves(&out_dir.join("curves.png"), &results, cfg.max_clicks)?;
    Ok(results)
}

pub fn write_matrix_summary(path: &Path, results: &[ProtocolResult]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| ModelError::io(path, e);
    writeln!(w, "method,clicks,mean,std").map_err(io)?;
    for r in results {
        for s in &r.summary {
            writeln!(w, "{},{},{:.12},{:.12}", r.name, s.clicks, s.mean, s.std).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Distinct line colors, assigned to methods in order.
pub const PLOT_COLORS: [[u8; 3]; 10] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Mean mAP-vs-clicks curves with +-1 std whiskers, one colored polyline per
/// method on a fixed `[0, 1]` mAP axis. A JSON legend (`*.legend.json`)
/// maps colors to method names.
pub fn plot_curves(path: &Path, results: &[ProtocolResult], max_clicks: usize) -> Result<()> {
    const W: u32 = 640;
    const H: u32 = 420;
    const MARGIN: f64 = 40.0;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    let px = |t: f64| MARGIN + t / max_clicks.max(1) as f64 * (W as f64 - 2.0 * MARGIN);
    let py = |m: f64| H as f64 - MARGIN - m.clamp(0.0, 1.0) * (H as f64 - 2.0 * MARGIN);
    let grid = image::Rgb([225, 225, 225]);
    for k in 0..=10 {
        draw_line(&mut img, (px(0.0), py(k as f64 / 10.0)), (px(max_clicks as f64), py(k as f64 / 10.0)), grid);
    }
    for t in (0..=max_clicks).step_by(5) {
        draw_line(&mut img, (px(t as f64), py(0.0)), (px(t as f64), py(1.0)), grid);
    }
    let axis = image::Rgb([0, 0, 0]);
    draw_line(&mut img, (px(0.0), py(0.0)), (px(max_clicks as f64), py(0.0)), axis);
    draw_line(&mut img, (px(0.0), py(0.0)), (px(0.0), py(1.0)), axis);
    let mut legend = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        let color = PLOT_COLORS[i % PLOT_COLORS.len()];
        legend.insert(r.name.clone(), color);
        let c = image::Rgb(color);
        for pair in r.summary.windows(2) {
            draw_line(&mut img, (px(pair[0].clicks as f64), py(pair[0].mean)), (px(pair[1].clicks as f64), py(pair[1].mean)), c);
        }
        for s in &r.summary {
            let x = px(s.clicks as f64);
            draw_line(&mut img, (x, py(s.mean - s.std)), (x, py(s.mean + s.std)), c);
        }
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| ModelError::Config(format!("encoding plot: {e}")))?;
    write_bytes_atomic(path, &bytes)?;
    let legend_path = path.with_extension("legend.json");
    let json = serde_json::to_vec_pretty(&legend).expect("string keys serialize");
    write_bytes_atomic(&legend_path, &json)?;
    Ok(())
}

fn draw_line(img: &mut image::RgbImage, a: (f64, f64), b: (f64, f64), color: image::Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let x = (a.0 + f * (b.0 - a.0)).round();
        let y = (a.1 + f * (b.1 - a.1)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}
