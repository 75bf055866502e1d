//! Deterministic synthetic tiny-object scenes.
//!
//! Eight sprite archetypes (shape x color) are scattered over a cluttered,
//! textured background. Two archetype pairs share a shape and have nearby
//! colors. With `scene_dependent_pairs` enabled, each scene independently
//! decides which of the two colors belongs to which class of a pair, so the
//! class of those objects cannot be read from one object alone: it is only
//! consistent within a scene. A single labeled example of a pair class in a
//! scene disambiguates every other instance in that scene.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetMeta, Split};
use crate::error::{CoreError, Result};
use crate::rng::RandomSource;
use crate::types::{BBox, ClassCatalog, GroundTruthObject, LabeledImage};

const SUPERSAMPLE: usize = 4;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disc,
    Square,
    Triangle,
    Cross,
    Diamond,
    Ring,
}

impl Shape {
    /// Whether the normalized point `(u, v)` in `[0,1]^2` lies inside the sprite.
    fn covers(self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - 0.5, v - 0.5);
        match self {
            Shape::Disc => du * du + dv * dv <= 0.25,
            Shape::Square => (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v),
            Shape::Triangle => v <= 1.0 && v >= 2.0 * du.abs(),
            Shape::Cross => du.abs() <= 0.5 && dv.abs() <= 0.5 && (du.abs() <= 1.0 / 6.0 || dv.abs() <= 1.0 / 6.0),
            Shape::Diamond => du.abs() + dv.abs() <= 0.5,
            Shape::Ring => {
                let r2 = du * du + dv * dv;
                (0.09..=0.25).contains(&r2)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub shape: Shape,
    pub color: [f32; 3],
}

/// The fixed eight-class sprite set.
pub fn archetypes() -> Vec<Archetype> {
    let a = |name: &str, shape, color| Archetype {
        name: name.to_string(),
        shape,
        color,
    };
    vec![
        a("red_disc", Shape::Disc, [0.85, 0.12, 0.12]),
        a("blue_square", Shape::Square, [0.15, 0.25, 0.90]),
        a("green_triangle", Shape::Triangle, [0.15, 0.75, 0.20]),
        a("yellow_cross", Shape::Cross, [0.92, 0.85, 0.15]),
        a("orange_diamond", Shape::Diamond, [0.95, 0.50, 0.10]),
        a("amber_diamond", Shape::Diamond, [0.95, 0.68, 0.10]),
        a("cyan_ring", Shape::Ring, [0.10, 0.80, 0.90]),
        a("teal_ring", Shape::Ring, [0.10, 0.66, 0.74]),
    ]
}

/// Class pairs that share a shape and have nearby colors.
pub const CONFUSABLE_PAIRS: [(usize, usize); 2] = [(4, 5), (6, 7)];

pub fn catalog() -> ClassCatalog {
    ClassCatalog::new(archetypes().into_iter().map(|a| a.name)).expect("archetype names are unique")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterConfig {
    /// Amplitude of the coarse value-noise layer.
    pub coarse_noise: f32,
    /// Amplitude of the fine value-noise layer.
    pub fine_noise: f32,
    /// Per-pixel uniform noise half-width.
    pub pixel_noise: f32,
    /// Inclusive range of straight "road" streaks per scene.
    pub streaks: [usize; 2],
}

impl Default for ClutterConfig {
    fn default() -> Self {
        Self {
            coarse_noise: 0.08,
            fine_noise: 0.04,
            pixel_noise: 0.02,
            streaks: [1, 4],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// `[W, H]`.
    pub canvas: [usize; 2],
    /// Inclusive range of objects per scene.
    pub objects_per_image: [usize; 2],
    /// Inclusive range of sprite side lengths in pixels.
    pub object_size: [usize; 2],
    pub max_pair_iou: f64,
    pub scene_dependent_pairs: bool,
    pub clutter: ClutterConfig,
    pub splits: SplitCounts,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            canvas: [256, 256],
            objects_per_image: [10, 60],
            object_size: [6, 16],
            max_pair_iou: 0.3,
            scene_dependent_pairs: true,
            clutter: ClutterConfig::default(),
            splits: SplitCounts {
                train: 500,
                val: 50,
                test: 100,
            },
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidParameter(m));
        let [smin, smax] = self.object_size;
        let [omin, omax] = self.objects_per_image;
        if smin < 4 || smin > smax {
            return bad(format!("object_size {:?} must satisfy 4 <= min <= max", self.object_size));
        }
        if smax + 2 > self.canvas[0].min(self.canvas[1]) {
            return bad(format!("object_size {:?} does not fit canvas {:?}", self.object_size, self.canvas));
        }
        if omin > omax {
            return bad(format!("objects_per_image {:?} is empty", self.objects_per_image));
        }
        if !(0.0..=1.0).contains(&self.max_pair_iou) {
            return bad(format!("max_pair_iou {} outside [0,1]", self.max_pair_iou));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub images: usize,
    pub objects: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub per_class: BTreeMap<String, usize>,
    pub placement_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub archetypes: Vec<Archetype>,
    pub confusable_pairs: Vec<[usize; 2]>,
    /// True when the class set contains at least one confusable pair.
    pub confusable: bool,
    pub splits: BTreeMap<String, SplitStats>,
}

/// A rendered scene plus placement bookkeeping.
pub struct GeneratedScene {
    pub image: LabeledImage,
    /// Objects that could not be placed within the attempt budget.
    pub placement_failures: usize,
}

pub fn image_id(split: Split, index: usize) -> String {
    format!("{}_{index:05}", split.as_str())
}

/// Anti-aliased coverage of a sprite inside an integer-aligned box, as
/// `(x, y, coverage)` for every pixel with nonzero coverage.
pub fn sprite_coverage(shape: Shape, x0: usize, y0: usize, w: usize, h: usize) -> Vec<(usize, usize, f32)> {
    let mut out = Vec::new();
    let n = SUPERSAMPLE as f64;
    for py in y0..y0 + h {
        for px in x0..x0 + w {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = (px - x0) as f64 / w as f64 + (sx as f64 + 0.5) / (n * w as f64);
                    let v = (py - y0) as f64 / h as f64 + (sy as f64 + 0.5) / (n * h as f64);
                    if shape.covers(u, v) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                out.push((px, py, hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32));
            }
        }
    }
    out
}

fn value_noise(rng: &mut RandomSource, cells: usize, w: usize, h: usize) -> Vec<f32> {
    let g = cells + 1;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let gy = y as f32 / h as f32 * cells as f32;
        let (iy, fy) = (gy.floor() as usize, gy.fract());
        for x in 0..w {
            let gx = x as f32 / w as f32 * cells as f32;
            let (ix, fx) = (gx.floor() as usize, gx.fract());
            let at = |a: usize, b: usize| grid[b * g + a];
            let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
            let bot = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

fn render_background(cfg: &GenConfig, rng: &mut RandomSource) -> Vec<f32> {
    let [w, h] = cfg.canvas;
    let base: f32 = rng.random_range(0.30..0.50);
    let tint: [f32; 3] = [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)];
    let coarse = value_noise(rng, 4, w, h);
    let fine = value_noise(rng, 24, w, h);
    let mut px = vec![0.0f32; w * h * 3];
    for i in 0..w * h {
        let v = base + cfg.clutter.coarse_noise * coarse[i] + cfg.clutter.fine_noise * fine[i];
        for c in 0..3 {
            px[i * 3 + c] = v + tint[c];
        }
    }
    // Straight low-contrast streaks.
    let n_streaks = rng.random_range(cfg.clutter.streaks[0]..=cfg.clutter.streaks[1]);
    for _ in 0..n_streaks {
        let shade: f32 = base + rng.random_range(-0.12..0.12);
        let width: f64 = rng.random_range(2.0..5.0);
        let (x_a, y_a) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (dx, dy) = (angle.cos(), angle.sin());
        for y in 0..h {
            for x in 0..w {
                let dist = ((x as f64 - x_a) * dy - (y as f64 - y_a) * dx).abs();
                if dist <= width / 2.0 {
                    let i = (y * w + x) * 3;
                    for c in 0..3 {
                        px[i + c] = shade + tint[c];
                    }
                }
            }
        }
    }
    for v in px.iter_mut() {
        *v += rng.random_range(-cfg.clutter.pixel_noise..=cfg.clutter.pixel_noise);
    }
    px
}

/// Render one scene. Pure function of `(cfg, split, index)`.
pub fn generate_scene(cfg: &GenConfig, split: Split, index: usize) -> Result<GeneratedScene> {
    cfg.validate()?;
    let arch = archetypes();
    let [w, h] = cfg.canvas;
    let mut rng = RandomSource::new(cfg.seed, format!("synthgen/{}/{index}", split.as_str()));
    let mut pixels = render_background(cfg, &mut rng);

    let mut palette: Vec<[f32; 3]> = arch.iter().map(|a| a.color).collect();
    for &(a, b) in &CONFUSABLE_PAIRS {
        if cfg.scene_dependent_pairs && rng.random_bool(0.5) {
            palette.swap(a, b);
        }
    }

    let target = rng.random_range(cfg.objects_per_image[0]..=cfg.objects_per_image[1]);
    let mut objects: Vec<GroundTruthObject> = Vec::with_capacity(target);
    let mut failures = 0;
    let [smin, smax] = cfg.object_size;
    for _ in 0..target {
        let class_id = rng.random_range(0..arch.len());
        let side = rng.random_range(smin..=smax);
        let other = (side as i64 + rng.random_range(-2i64..=2)).clamp(smin as i64, smax as i64) as usize;
        let (bw, bh) = if rng.random_bool(0.5) { (side, other) } else { (other, side) };
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x0 = rng.random_range(0..=w - bw);
            let y0 = rng.random_range(0..=h - bh);
            let bbox = BBox::new(x0 as f64, y0 as f64, (x0 + bw) as f64, (y0 + bh) as f64)?;
            if objects.iter().all(|o| o.bbox.iou(&bbox) <= cfg.max_pair_iou) {
                placed = Some((x0, y0, bbox));
                break;
            }
        }
        let Some((x0, y0, bbox)) = placed else {
            failures += 1;
            continue;
        };
        let gain: f32 = rng.random_range(0.92..1.08);
        let color = palette[class_id].map(|c| (c * gain).min(1.0));
        for (px, py, alpha) in sprite_coverage(arch[class_id].shape, x0, y0, bw, bh) {
            let i = (py * w + px) * 3;
            for c in 0..3 {
                pixels[i + c] = pixels[i + c] * (1.0 - alpha) + color[c] * alpha;
            }
        }
        objects.push(GroundTruthObject { bbox, class_id });
    }
    if failures > 0 {
        warn!(
            "{}: {failures} object(s) could not be placed within {MAX_PLACEMENT_ATTEMPTS} attempts",
            image_id(split, index)
        );
    }
    // Quantize to what the PNG will hold so in-memory and on-disk scenes agree.
    for v in pixels.iter_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    Ok(GeneratedScene {
        image: LabeledImage::new(image_id(split, index), w, h, pixels, objects)?,
        placement_failures: failures,
    })
}

pub fn generate_split(cfg: &GenConfig, split: Split) -> Result<(Vec<LabeledImage>, SplitStats)> {
    let names = catalog();
    let mut stats = SplitStats {
        min_objects: usize::MAX,
        ..Default::default()
    };
    let mut images = Vec::with_capacity(cfg.splits.get(split));
    for i in 0..cfg.splits.get(split) {
        let scene = generate_scene(cfg, split, i)?;
        let n = scene.image.num_objects();
        stats.images += 1;
        stats.objects += n;
        stats.min_objects = stats.min_objects.min(n);
        stats.max_objects = stats.max_objects.max(n);
        stats.placement_failures += scene.placement_failures;
        for o in &scene.image.objects {
            *stats.per_class.entry(names.name(o.class_id).unwrap_or("?").to_string()).or_default() += 1;
        }
        images.push(scene.image);
    }
    if stats.images == 0 {
        stats.min_objects = 0;
    }
    Ok((images, stats))
}

/// Write a full dataset (all splits) plus `manifest.json` under `out_root`.
pub fn generate(cfg: &GenConfig, out_root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    dataset::write_meta(
        out_root,
        &DatasetMeta {
            classes: catalog(),
            image_size: cfg.canvas,
        },
    )?;
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let (images, stats) = generate_split(cfg, split)?;
        dataset::save_dataset(out_root, split, &images)?;
        // Keep empty split directories so loaders see a well-formed layout.
        let labels = out_root.join("labels").join(split.as_str());
        std::fs::create_dir_all(&labels).map_err(|e| CoreError::io(&labels, e))?;
        splits.insert(split.as_str().to_string(), stats);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        archetypes: archetypes(),
        confusable_pairs: CONFUSABLE_PAIRS.iter().map(|&(a, b)| [a, b]).collect(),
        confusable: !CONFUSABLE_PAIRS.is_empty(),
        splits,
    };
    dataset::write_json_atomic(&out_root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
