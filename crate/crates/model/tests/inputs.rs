use c3det_autograd::Tensor;
use c3det_core::{LabeledImage, UserInput};
use c3det_model::*;
use c3det_model::inputs::*;
use c3det_model::config::Variant;

fn blank(h: usize, w: usize) -> LabeledImage {
    LabeledImage::new("x", w, h, vec![0.5; h * w * 3], vec![]).unwrap()
}

#[test]
fn image_is_channel_major_and_standardized() {
    let mut img = blank(2, 3);
    img.pixels[3 * 4] = 0.75; // pixel (1, 1), red channel
    let t: Tensor<f64> = image_tensor(&img, &ModelConfig::default());
    assert_eq!(t.shape(), &[3, 2, 3]);
    assert_eq!(t.data()[4], 1.0);
    assert_eq!(t.data()[6 + 4], 0.0);
}

#[test]
fn prepared_inputs_follow_variant() {
    let inputs = [UserInput {
        x: 10.0,
        y: 12.0,
        class_id: 2,
    }];
    let cfg = ModelConfig::desk();
    let full: PreparedInputs<f64> = prepare_inputs(&cfg, 8, 32, 32, &inputs).unwrap();
    let stack = full.stack.unwrap();
    assert_eq!(stack.shape(), &[8, 32, 32]);
    assert_eq!(stack.data()[2 * 1024 + 12 * 32 + 10], 1.0);
    assert_eq!(full.c3_maps.len(), 1);
    assert!((full.c3_maps[0].0.sum() - 1.0).abs() < 1e-9);
    let det: PreparedInputs<f64> = prepare_inputs(&cfg.clone().with_variant(Variant::DetectorOnly), 8, 32, 32, &inputs).unwrap();
    assert_eq!(det, PreparedInputs::none());
    let bad = [UserInput {
        x: 1.0,
        y: 1.0,
        class_id: 8,
    }];
    assert!(prepare_inputs::<f64>(&cfg, 8, 32, 32, &bad).is_err());
}
