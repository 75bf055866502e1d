use c3det_core::simulate::SimulatedClick;
use c3det_core::{BBox, GroundTruthObject};
use c3det_model::*;
use c3det_model::loss::*;

fn gt(b: [f64; 4], c: usize) -> GroundTruthObject {
    GroundTruthObject {
        bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        class_id: c,
    }
}

fn numeric(f: impl Fn(f64) -> f64, z: f64) -> f64 {
    let e = 1e-6;
    (f(z + e) - f(z - e)) / (2.0 * e)
}

#[test]
fn focal_gradient_matches_finite_difference() {
    for &z in &[-30.0, -3.0, -0.2, 0.0, 0.7, 4.0, 25.0] {
        for pos in [true, false] {
            let (_, d) = focal_loss(z, pos, 0.25, 2.0);
            let n = numeric(|v| focal_loss(v, pos, 0.25, 2.0).0, z);
            assert!((d - n).abs() < 1e-6 * (1.0 + n.abs()), "z={z} pos={pos}: {d} vs {n}");
        }
    }
}

#[test]
fn softmax_focal_gradient_matches_finite_difference() {
    let logits = [0.3, -1.2, 2.0, 0.1];
    let (_, g) = softmax_focal(&logits, 1, 2.0);
    for j in 0..4 {
        let n = numeric(
            |v| {
                let mut l = logits;
                l[j] = v;
                softmax_focal(&l, 1, 2.0).0
            },
            logits[j],
        );
        assert!((g[j] - n).abs() < 1e-7);
    }
}

#[test]
fn center_and_inside_neighbors_are_positive() {
    // 8x8 box centered at (10, 10) with stride 4: center cell (2, 2);
    // neighbors with centers 6 and 14 lie on the box edge (closed).
    let owner = assign_targets(&[gt([6.0, 6.0, 14.0, 14.0], 0)], 4, 8, 8);
    let pos: Vec<usize> = owner.iter().enumerate().filter_map(|(i, o)| o.map(|_| i)).collect();
    assert_eq!(pos, vec![9, 10, 11, 17, 18, 19, 25, 26, 27]);
    // A 2x2 box only gets its center cell.
    let owner = assign_targets(&[gt([9.0, 9.0, 11.0, 11.0], 0)], 4, 8, 8);
    assert_eq!(owner.iter().filter(|o| o.is_some()).count(), 1);
    assert_eq!(owner[18], Some(0));
}

#[test]
fn smaller_object_wins_contested_cells() {
    let owner = assign_targets(&[gt([0.0, 0.0, 16.0, 16.0], 0), gt([6.0, 6.0, 10.0, 10.0], 1)], 4, 4, 4);
    // Both centers fall in cell (2, 2); the smaller object takes it.
    assert_eq!(owner[5], Some(1));
    assert_eq!(owner[10], Some(1));
    assert_eq!(owner[15], Some(0));
}

#[test]
fn uel_without_association_is_an_error() {
    let pred = UelPrediction {
        bbox: BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
        class_logits: vec![0.0, 0.0],
    };
    let click = SimulatedClick {
        input: c3det_core::UserInput {
            x: 1.0,
            y: 1.0,
            class_id: 0,
        },
        gt_index: 3,
    };
    assert!(matches!(
        uel_loss(&[pred], &[click], &[], UelCriterion::CrossEntropy),
        Err(ModelError::MissingAssociation { index: 0 })
    ));
}
