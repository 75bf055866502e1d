//! Finite-difference verification of every differentiable stage of the model,
//! on small random 64-bit instances.

use c3det_autograd::check::{check_gradients, GradCheck};
use c3det_autograd::{AutogradError, Graph, Result as AgResult, Tensor, Var};
use c3det_core::simulate::SimulatedClick;
use c3det_core::{BBox, GroundTruthObject, LabeledImage, RandomSource, UserInput};
use rand::Rng;

use crate::config::{C3Order, ModelConfig, Variant};
use crate::error::Result;
use crate::inputs::{image_tensor, prepare_inputs};
use crate::loss::{total_loss, uel_loss, UelCriterion, UelPrediction};
use crate::network::{c3_forward, collate_correlations, correlate, extract_template, forward, fuse, head_forward};
use crate::params::{BoundParams, ParamStore};

pub const EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: &'static str,
    pub result: GradCheck,
}

fn random_tensor(rng: &mut RandomSource, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// A random non-negative map normalized to sum 1.
pub fn random_distribution(rng: &mut RandomSource, h: usize, w: usize) -> Tensor<f64> {
    let mut v: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    Tensor::from_vec(&[h, w], v).expect("shape matches")
}

/// Scalarize `x` with a fixed random weighting so every entry matters.
fn project(g: &mut Graph<f64>, x: Var, rng_seed: u64) -> AgResult<Var> {
    let mut rng = RandomSource::new(rng_seed, "gradcheck/projection");
    let r = random_tensor(&mut rng, g.shape(x));
    let value: f64 = g.value(x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    g.external_scalar(x, value, r)
}

fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        backbone_channels: 4,
        lf_channels: 3,
        fusion_proj_channels: 4,
        blocks: 2,
        stride: 2,
        ..ModelConfig::default()
    }
    .with_variant(variant)
}

/// A small scene with `n` objects of random class.
pub fn tiny_scene(rng: &mut RandomSource, size: usize, n: usize, num_classes: usize) -> LabeledImage {
    let pixels = (0..size * size * 3).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let objects = (0..n)
        .map(|_| {
            let w = rng.random_range(2.0..size as f64 / 2.0);
            let h = rng.random_range(2.0..size as f64 / 2.0);
            let x = rng.random_range(0.0..size as f64 - w);
            let y = rng.random_range(0.0..size as f64 - h);
            GroundTruthObject {
                bbox: BBox::new(x, y, x + w, y + h).expect("positive size"),
                class_id: rng.random_range(0..num_classes),
            }
        })
        .collect();
    LabeledImage::new("gradcheck", size, size, pixels, objects).expect("objects inside")
}

/// Run all checks. Each returns per-input relative errors.
pub fn run_all(seed: u64) -> Result<Vec<NamedCheck>> {
    let mut out = Vec::new();
    let mut rng = RandomSource::new(seed, "gradcheck");
    let (c, h, w, classes) = (5, 6, 7, 3);

    // Template extraction and correlation separately, w.r.t. the features.
    let u = random_distribution(&mut rng, h, w);
    let f = random_tensor(&mut rng, &[c, h, w]);
    let r = check_gradients(std::slice::from_ref(&f), EPS, |g, v| {
        let t = extract_template(g, v[0], &u).map_err(to_autograd)?;
        project(g, t, 1)
    })?;
    out.push(NamedCheck {
        name: "extract_template",
        result: r,
    });
    let t0 = random_tensor(&mut rng, &[c]);
    let r = check_gradients(&[t0, f.clone()], EPS, |g, v| {
        let m = correlate(g, v[0], v[1]).map_err(to_autograd)?;
        project(g, m, 2)
    })?;
    out.push(NamedCheck { name: "correlate", result: r });

    // Collation with random maps (ties have probability zero).
    let maps: Vec<Tensor<f64>> = (0..4).map(|_| random_tensor(&mut rng, &[h, w])).collect();
    let labels = [0usize, 2, 0, 2];
    let r = check_gradients(&maps, EPS, |g, v| {
        let pairs: Vec<(Var, usize)> = v.iter().copied().zip(labels).collect();
        let m = collate_correlations(g, &pairs, classes, h, w).map_err(to_autograd)?;
        project(g, m, 3)
    })?;
    out.push(NamedCheck {
        name: "collate_correlations",
        result: r,
    });

    // Extraction, correlation and collation chained, both orders.
    let heat: Vec<(Tensor<f64>, usize)> = [0usize, 1, 1].iter().map(|&k| (random_distribution(&mut rng, h, w), k)).collect();
    for (name, order) in [
        ("c3_correlate_then_collate", C3Order::CorrelateThenCollate),
        ("c3_collate_then_correlate", C3Order::CollateThenCorrelate),
    ] {
        let r = check_gradients(std::slice::from_ref(&f), EPS, |g, v| {
            let m = c3_forward(g, v[0], &heat, order, classes).map_err(to_autograd)?;
            project(g, m, 4)
        })?;
        out.push(NamedCheck { name, result: r });
    }

    // Fusion and head with their parameters.
    let (fi, flf, fc3) = (
        random_tensor(&mut rng, &[4, h, w]),
        random_tensor(&mut rng, &[3, h, w]),
        random_tensor(&mut rng, &[classes, h, w]),
    );
    let fw = random_tensor(&mut rng, &[4, 4 + 3 + classes, 1, 1]);
    let fb = random_tensor(&mut rng, &[4]);
    let hw = random_tensor(&mut rng, &[4, 4, 3, 3]);
    let hb = random_tensor(&mut rng, &[4]);
    let ow = random_tensor(&mut rng, &[1 + classes + 4, 4, 1, 1]);
    let ob = random_tensor(&mut rng, &[1 + classes + 4]);
    let names = ["fuse.weight", "fuse.bias", "head.conv.weight", "head.conv.bias", "head.out.weight", "head.out.bias"];
    let r = check_gradients(&[fi, flf, fc3, fw, fb, hw, hb, ow, ob], EPS, |g, v| {
        let bound = bind_names(&names, &v[3..]);
        let fused = fuse(g, &bound, v[0], v[1], v[2]).map_err(to_autograd)?;
        let head = head_forward(g, &bound, fused).map_err(to_autograd)?;
        project(g, head, 5)
    })?;
    out.push(NamedCheck {
        name: "fuse_and_head",
        result: r,
    });

    // Detection + UEL loss w.r.t. the head output.
    let cfg = tiny_config(Variant::Full);
    let scene = tiny_scene(&mut rng, 16, 3, classes);
    let clicks: Vec<SimulatedClick> = (0..2)
        .map(|i| {
            let (x, y) = scene.objects[i].bbox.center();
            SimulatedClick {
                input: UserInput {
                    x,
                    y,
                    class_id: scene.objects[i].class_id,
                },
                gt_index: i,
            }
        })
        .collect();
    let mut head = random_tensor(&mut rng, &[1 + classes + 4, 8, 8]);
    // Keep objectness high so UEL candidates exist and sit far from the score floor.
    head.data_mut()[..64].iter_mut().for_each(|v| *v = 3.0 + *v);
    let r = check_gradients(std::slice::from_ref(&head), EPS, |g, v| {
        let (b, grad) = total_loss(g.value(v[0]), &scene, &clicks, &cfg, classes).map_err(to_autograd)?;
        g.external_scalar(v[0], b.total, grad)
    })?;
    out.push(NamedCheck {
        name: "total_loss",
        result: r,
    });

    // UEL alone, w.r.t. class logits.
    let logits = random_tensor(&mut rng, &[6, classes]);
    let boxes: Vec<BBox> = (0..6)
        .map(|_| {
            let x = rng.random_range(0.0..12.0);
            let y = rng.random_range(0.0..12.0);
            BBox::new(x, y, x + 4.0, y + 4.0).expect("positive size")
        })
        .collect();
    for (name, ell) in [("uel_cross_entropy", UelCriterion::CrossEntropy), ("uel_focal", UelCriterion::Focal { gamma: 2.0 })] {
        let r = check_gradients(std::slice::from_ref(&logits), EPS, |g, v| {
            let l = g.value(v[0]).data().to_vec();
            let preds: Vec<UelPrediction> = boxes
                .iter()
                .enumerate()
                .map(|(j, b)| UelPrediction {
                    bbox: *b,
                    class_logits: l[j * classes..(j + 1) * classes].to_vec(),
                })
                .collect();
            let u = uel_loss(&preds, &clicks, &scene.objects, ell).map_err(to_autograd)?;
            let grad = Tensor::from_vec(&[6, classes], u.grads.concat())?;
            g.external_scalar(v[0], u.value, grad)
        })?;
        out.push(NamedCheck { name, result: r });
    }

    // The whole network, end to end, w.r.t. every parameter.
    for (name, variant) in [
        ("network_full", Variant::Full),
        ("network_collate_then_correlate", Variant::CollateThenCorrelate),
        ("network_early_fusion", Variant::EarlyFusion),
    ] {
        let cfg = tiny_config(variant);
        let params = ParamStore::<f64>::init(&cfg, classes, seed);
        let names: Vec<String> = params.names().cloned().collect();
        // Jitter every parameter so zero-initialized biases do not sit exactly
        // on a ReLU kink, where central differences are meaningless.
        let tensors: Vec<Tensor<f64>> = params
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
                t
            })
            .collect();
        let inputs: Vec<UserInput> = clicks.iter().map(|c| c.input).collect();
        let prepared = prepare_inputs::<f64>(&cfg, classes, scene.height, scene.width, &inputs)?;
        let image = image_tensor::<f64>(&scene, &cfg);
        let r = check_gradients(&tensors, EPS, |g, v| {
            let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let bound = bind_names(&name_refs, v);
            let out = forward(g, &bound, &cfg, classes, &image, &prepared).map_err(to_autograd)?;
            project(g, out.head, 6)
        })?;
        out.push(NamedCheck { name, result: r });
    }
    Ok(out)
}

fn to_autograd(e: crate::error::ModelError) -> AutogradError {
    AutogradError::Shape(e.to_string())
}

fn bind_names(names: &[&str], vars: &[Var]) -> BoundParams {
    BoundParams::from_pairs(names.iter().zip(vars).map(|(n, v)| (n.to_string(), *v)))
}
