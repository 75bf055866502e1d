//! User-input heatmaps.
//!
//! Pixel `(px, py)` sits at integer coordinates, so a click at `(3, 3)` peaks
//! exactly on pixel `(3, 3)`.

use crate::error::{CoreError, Result};

/// Gaussians are cut to zero beyond this many standard deviations.
pub const TRUNCATE_SIGMAS: f64 = 3.0;

/// Floor on the resized mass before normalization.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Default heatmap sigma for the late-fusion and correlation pathways.
pub const SIGMA_LATE_FUSION: f64 = 1.0;

/// Default heatmap sigma for the early-fusion baseline.
pub const SIGMA_EARLY_FUSION: f64 = 9.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major `height x width`.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// One Gaussian map per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassHeatmapStack {
    pub maps: Vec<Heatmap>,
}

impl ClassHeatmapStack {
    pub fn num_classes(&self) -> usize {
        self.maps.len()
    }

    /// Channel-major `C x H x W` buffer.
    pub fn to_chw(&self) -> Vec<f64> {
        self.maps.iter().flat_map(|m| m.values.iter().copied()).collect()
    }
}

/// Render `exp(-d^2 / (2 sigma^2))` around `(x, y)` on an `height x width` grid.
pub fn render_gaussian(x: f64, y: f64, sigma: f64, height: usize, width: usize) -> Result<Heatmap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CoreError::InvalidParameter(format!("heatmap sigma must be positive, got {sigma}")));
    }
    if !(x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64) {
        return Err(CoreError::InvalidParameter(format!(
            "heatmap center ({x}, {y}) outside {width}x{height}"
        )));
    }
    let mut map = Heatmap::zeros(height, width);
    let radius = TRUNCATE_SIGMAS * sigma;
    let denom = 2.0 * sigma * sigma;
    let x0 = (x - radius).floor().max(0.0) as usize;
    let y0 = (y - radius).floor().max(0.0) as usize;
    let x1 = ((x + radius).ceil().max(0.0) as usize).min(width.saturating_sub(1));
    let y1 = ((y + radius).ceil().max(0.0) as usize).min(height.saturating_sub(1));
    for py in y0..=y1 {
        for px in x0..=x1 {
            let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
            if d2 <= radius * radius {
                map.values[py * width + px] = (-d2 / denom).exp();
            }
        }
    }
    Ok(map)
}

/// Group heatmaps by class and take the pixel-wise max inside each group.
/// Classes without inputs get an all-zero map.
pub fn collate_by_class(inputs: &[(&Heatmap, usize)], num_classes: usize, height: usize, width: usize) -> Result<ClassHeatmapStack> {
    let mut maps = vec![Heatmap::zeros(height, width); num_classes];
    for (h, class_id) in inputs {
        if h.shape() != (height, width) {
            return Err(CoreError::ShapeMismatch {
                what: "collate_by_class",
                detail: format!("{}x{} heatmap, expected {height}x{width}", h.height, h.width),
            });
        }
        let target = maps.get_mut(*class_id).ok_or(CoreError::ClassOutOfRange {
            class_id: *class_id,
            num_classes,
        })?;
        for (t, &v) in target.values.iter_mut().zip(&h.values) {
            *t = t.max(v);
        }
    }
    Ok(ClassHeatmapStack { maps })
}

/// Bilinear resize with half-pixel centers (edge-clamped).
pub fn resize_bilinear(h: &Heatmap, out_h: usize, out_w: usize) -> Heatmap {
    let mut out = Heatmap::zeros(out_h, out_w);
    let sy = h.height as f64 / out_h as f64;
    let sx = h.width as f64 / out_w as f64;
    for oy in 0..out_h {
        let (y0, y1, fy) = source_coord(oy, sy, h.height);
        for ox in 0..out_w {
            let (x0, x1, fx) = source_coord(ox, sx, h.width);
            let top = h.get(x0, y0) * (1.0 - fx) + h.get(x1, y0) * fx;
            let bottom = h.get(x0, y1) * (1.0 - fx) + h.get(x1, y1) * fx;
            out.values[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

fn source_coord(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize to `out_h x out_w`, then divide by the total so the result sums to 1.
pub fn resize_normalize(h: &Heatmap, out_h: usize, out_w: usize) -> Result<Heatmap> {
    let mut out = resize_bilinear(h, out_h, out_w);
    let total = out.sum();
    if !(total > NORMALIZE_EPS) {
        return Err(CoreError::DegenerateHeatmap(total));
    }
    out.values.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}
