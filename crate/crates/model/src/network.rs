//! Forward pass: backbone, late fusion, class-wise collated correlation,
//! fusion and the dense detection head.
//!
//! Every function builds nodes on a caller-owned [`Graph`], so the same code
//! runs in `f32` for training and inference and in `f64` for gradient checks.

use c3det_autograd::{Graph, Scalar, Tensor, Var};

use crate::config::{C3Order, ModelConfig};
use crate::error::{ModelError, Result};
use crate::inputs::PreparedInputs;
use crate::params::BoundParams;

const NORM_EPS: f64 = 1e-5;

fn conv_stack<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, cfg: &ModelConfig, prefix: &str, x: Var, with_norm: bool) -> Result<Var> {
    let mut h = x;
    let down = cfg.downsample_blocks();
    for i in 0..cfg.blocks {
        let stride = if i < down { 2 } else { 1 };
        let w = p.var(&format!("{prefix}.conv{i}.weight"))?;
        let b = if with_norm { None } else { Some(p.var(&format!("{prefix}.conv{i}.bias"))?) };
        h = g.conv2d(h, w, b, stride, 1)?;
        if with_norm {
            let gamma = p.var(&format!("{prefix}.norm{i}.gamma"))?;
            let beta = p.var(&format!("{prefix}.norm{i}.beta"))?;
            h = g.instance_norm(h, gamma, beta, NORM_EPS)?;
        }
        if i + 1 < cfg.blocks {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Image (optionally concatenated with early-fusion heatmaps) to `F_I`.
///
/// The last block ends in a per-channel affine normalization without a
/// nonlinearity, so `F_I` is standardized per image.
pub fn backbone_forward<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, cfg: &ModelConfig, num_classes: usize, image: Var, early: Option<Var>) -> Result<Var> {
    let x = match (cfg.variant.early_fusion(), early) {
        (true, Some(stack)) => {
            if g.shape(stack)[0] != num_classes {
                return Err(ModelError::Config(format!(
                    "early-fusion stack has {} channels, expected {num_classes}",
                    g.shape(stack)[0]
                )));
            }
            g.concat(&[image, stack])?
        }
        (true, None) => return Err(ModelError::Config("early_fusion needs the heatmap stack".into())),
        (false, _) => image,
    };
    conv_stack(g, p, cfg, "backbone", x, true)
}

/// `F_LF` from the `[C, H, W]` class-collated heatmap stack. Convolutions
/// only: no pooling, no normalization (which would rescale sparse click maps
/// differently depending on the number of clicks).
pub fn lf_forward<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, cfg: &ModelConfig, stack: Var) -> Result<Var> {
    conv_stack(g, p, cfg, "lf", stack, false)
}

/// Template extraction: `T(i) = sum_{x,y} F(i,x,y) U(x,y)` with `U` a constant weight map.
pub fn extract_template<T: Scalar>(g: &mut Graph<T>, features: Var, u: &Tensor<T>) -> Result<Var> {
    Ok(g.weighted_pool(features, u)?)
}

/// Correlation: `M(x,y) = sum_i T(i) F(i,x,y)`.
pub fn correlate<T: Scalar>(g: &mut Graph<T>, template: Var, features: Var) -> Result<Var> {
    Ok(g.correlate(template, features)?)
}

/// Collation: class-wise element-wise max into a `[C, H_f, W_f]` tensor; classes
/// without maps are zero.
pub fn collate_correlations<T: Scalar>(g: &mut Graph<T>, maps: &[(Var, usize)], num_classes: usize, h: usize, w: usize) -> Result<Var> {
    Ok(g.class_max(maps, num_classes, h, w)?)
}

/// Per-class max of normalized heatmaps, renormalized to sum 1.
fn collate_heatmaps<T: Scalar>(maps: &[(Tensor<T>, usize)], num_classes: usize) -> Vec<(Tensor<T>, usize)> {
    let mut out = Vec::new();
    for c in 0..num_classes {
        let mut acc: Option<Tensor<T>> = None;
        for (m, _) in maps.iter().filter(|(_, k)| *k == c) {
            match acc.as_mut() {
                None => acc = Some(m.clone()),
                Some(a) => a.data_mut().iter_mut().zip(m.data()).for_each(|(a, &v)| *a = a.max(v)),
            }
        }
        if let Some(mut a) = acc {
            let total = a.sum();
            a.data_mut().iter_mut().for_each(|v| *v = *v / total);
            out.push((a, c));
        }
    }
    out
}

/// `F_C3` from `F_I` and the per-input normalized heatmaps.
pub fn c3_forward<T: Scalar>(g: &mut Graph<T>, features: Var, maps: &[(Tensor<T>, usize)], order: C3Order, num_classes: usize) -> Result<Var> {
    let (h, w) = (g.shape(features)[1], g.shape(features)[2]);
    let grouped;
    let maps = match order {
        C3Order::CorrelateThenCollate => maps,
        C3Order::CollateThenCorrelate => {
            grouped = collate_heatmaps(maps, num_classes);
            &grouped[..]
        }
    };
    let mut corr = Vec::with_capacity(maps.len());
    for (u, class) in maps {
        let t = extract_template(g, features, u)?;
        corr.push((correlate(g, t, features)?, *class));
    }
    collate_correlations(g, &corr, num_classes, h, w)
}

/// Channel concat of `F_I`, `F_LF`, `F_C3`, then a 1x1 projection and ReLU.
pub fn fuse<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, f_i: Var, f_lf: Var, f_c3: Var) -> Result<Var> {
    let cat = g.concat(&[f_i, f_lf, f_c3])?;
    let w = p.var("fuse.weight")?;
    let b = p.var("fuse.bias")?;
    let y = g.conv2d(cat, w, Some(b), 1, 0)?;
    Ok(g.relu(y))
}

/// `[1 + C + 4, H_f, W_f]`: objectness logit, class logits, `(dx, dy, log w, log h)`.
pub fn head_forward<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, f: Var) -> Result<Var> {
    let h = g.conv2d(f, p.var("head.conv.weight")?, Some(p.var("head.conv.bias")?), 1, 1)?;
    let h = g.relu(h);
    Ok(g.conv2d(h, p.var("head.out.weight")?, Some(p.var("head.out.bias")?), 1, 0)?)
}

/// Intermediate tensors of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub f_i: Var,
    pub f_lf: Var,
    pub f_c3: Var,
    pub fused: Var,
    pub head: Var,
}

/// Everything after the backbone, given `F_I`.
pub fn forward_from_features<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    num_classes: usize,
    f_i: Var,
    inputs: &PreparedInputs<T>,
) -> Result<ForwardVars> {
    let (h, w) = (g.shape(f_i)[1], g.shape(f_i)[2]);
    let f_lf = match (&inputs.stack, cfg.variant.uses_lf()) {
        (Some(stack), true) => {
            let s = g.constant(stack.clone());
            lf_forward(g, p, cfg, s)?
        }
        (None, true) => return Err(ModelError::Config("late fusion needs the heatmap stack".into())),
        (_, false) => g.constant(Tensor::zeros(&[cfg.lf_channels, h, w])),
    };
    let f_c3 = match cfg.variant.c3_order() {
        Some(order) => c3_forward(g, f_i, &inputs.c3_maps, order, num_classes)?,
        None => g.constant(Tensor::zeros(&[num_classes, h, w])),
    };
    if g.shape(f_lf)[1..] != [h, w] {
        return Err(ModelError::Config(format!("F_LF {:?} does not match F_I {:?}", g.shape(f_lf), g.shape(f_i))));
    }
    let fused = fuse(g, p, f_i, f_lf, f_c3)?;
    let head = head_forward(g, p, fused)?;
    Ok(ForwardVars {
        f_i,
        f_lf,
        f_c3,
        fused,
        head,
    })
}

/// Full forward pass from a `[3, H, W]` image tensor.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    num_classes: usize,
    image: &Tensor<T>,
    inputs: &PreparedInputs<T>,
) -> Result<ForwardVars> {
    let x = g.constant(image.clone());
    let early = match (&inputs.stack, cfg.variant.early_fusion()) {
        (Some(s), true) => Some(g.constant(s.clone())),
        _ => None,
    };
    let f_i = backbone_forward(g, p, cfg, num_classes, x, early)?;
    forward_from_features(g, p, cfg, num_classes, f_i, inputs)
}
