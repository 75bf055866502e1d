use std::collections::BTreeMap;

use c3det_autograd::Tensor;
use c3det_model::*;
use c3det_model::params::*;
use c3det_model::config::Variant;

#[test]
fn layout_follows_variant() {
    let cfg = ModelConfig::desk();
    let full = ParamStore::<f32>::init(&cfg, 8, 0);
    assert!(full.names().any(|n| n.starts_with("lf.")));
    full.check_layout(&cfg, 8).unwrap();
    let det = ParamStore::<f32>::init(&cfg.clone().with_variant(Variant::DetectorOnly), 8, 0);
    assert!(!det.names().any(|n| n.starts_with("lf.")));
    assert!(det.check_layout(&cfg, 8).is_err());
    let ef = ParamStore::<f32>::init(&cfg.clone().with_variant(Variant::EarlyFusion), 8, 0);
    assert_eq!(ef.get("backbone.conv0.weight").unwrap().shape(), &[32, 11, 3, 3]);
}

#[test]
fn init_is_seeded() {
    let cfg = ModelConfig::desk();
    assert_eq!(ParamStore::<f32>::init(&cfg, 8, 3), ParamStore::<f32>::init(&cfg, 8, 3));
    assert_ne!(ParamStore::<f32>::init(&cfg, 8, 3), ParamStore::<f32>::init(&cfg, 8, 4));
    let p = ParamStore::<f32>::init(&cfg, 8, 3);
    let b = p.get("head.out.bias").unwrap().data()[0];
    assert!((b as f64 + 99f64.ln()).abs() < 1e-5);
}

#[test]
fn sgd_momentum_matches_hand_computation() {
    let mut params = ParamStore::from_map(BTreeMap::from([("a.weight".to_string(), Tensor::from_vec(&[1], vec![1.0f32]).unwrap())]));
    let grads = BTreeMap::from([("a.weight".to_string(), Tensor::from_vec(&[1], vec![0.5f32]).unwrap())]);
    let mut opt = Optimizer::new(OptimizerConfig::Sgd {
        momentum: 0.9,
        weight_decay: 0.0,
    });
    opt.step(&mut params, &grads, 0.1);
    opt.step(&mut params, &grads, 0.1);
    // v1 = 0.5, w1 = 0.95; v2 = 0.95, w2 = 0.855
    assert!((params.get("a.weight").unwrap().data()[0] - 0.855).abs() < 1e-6);
}
