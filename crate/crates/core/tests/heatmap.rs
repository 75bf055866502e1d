use proptest::prelude::*;

use c3det_core::*;
use c3det_core::heatmap::*;

#[test]
fn unit_sigma_values() {
    let h = render_gaussian(3.0, 3.0, 1.0, 7, 7).unwrap();
    assert_eq!(h.get(3, 3), 1.0);
    for (x, y) in [(2, 3), (4, 3), (3, 2), (3, 4)] {
        assert!((h.get(x, y) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((h.get(x, y) - 0.6065).abs() < 1e-4);
    }
    // (0,3) is exactly 3 sigma away: kept. (0,0) is beyond: cut.
    assert!(h.get(0, 3) > 0.0);
    assert_eq!(h.get(0, 0), 0.0);
}

#[test]
fn sigma_must_be_positive() {
    assert!(render_gaussian(1.0, 1.0, 0.0, 4, 4).is_err());
    assert!(render_gaussian(1.0, 1.0, -2.0, 4, 4).is_err());
    assert!(render_gaussian(1.0, 1.0, f64::NAN, 4, 4).is_err());
}

#[test]
fn corner_gaussian_is_truncated_and_non_negative() {
    let h = render_gaussian(0.0, 0.0, 1.0, 8, 8).unwrap();
    assert!(h.values.iter().all(|&v| v >= 0.0));
    assert_eq!(h.get(0, 0), 1.0);
    assert_eq!(h.get(7, 7), 0.0);
    assert!(h.max_value() <= 1.0);
}

#[test]
fn off_grid_peak_below_one() {
    let h = render_gaussian(2.5, 2.5, 1.0, 6, 6).unwrap();
    assert!(h.max_value() < 1.0);
    assert!(h.max_value() > 0.0);
}

#[test]
fn center_gaussian_flip_symmetric() {
    let (n, c) = (9, 4.0);
    let h = render_gaussian(c, c, 1.7, n, n).unwrap();
    for y in 0..n {
        for x in 0..n {
            assert!((h.get(x, y) - h.get(n - 1 - x, y)).abs() <= 1e-12);
            assert!((h.get(x, y) - h.get(x, n - 1 - y)).abs() <= 1e-12);
        }
    }
}

#[test]
fn disjoint_same_class_peaks_survive() {
    let a = render_gaussian(2.0, 2.0, 1.0, 16, 16).unwrap();
    let b = render_gaussian(12.0, 12.0, 1.0, 16, 16).unwrap();
    let stack = collate_by_class(&[(&a, 1), (&b, 1)], 3, 16, 16).unwrap();
    assert_eq!(stack.maps[1].get(2, 2), 1.0);
    assert_eq!(stack.maps[1].get(12, 12), 1.0);
    assert_eq!(stack.maps[0].sum(), 0.0);
    assert_eq!(stack.maps[2].sum(), 0.0);
}

#[test]
fn no_inputs_gives_zero_maps() {
    let stack = collate_by_class(&[], 8, 5, 6).unwrap();
    assert_eq!(stack.num_classes(), 8);
    assert!(stack.maps.iter().all(|m| m.shape() == (5, 6) && m.sum() == 0.0));
}

#[test]
fn overlapping_max_matches_loop_oracle() {
    let a = render_gaussian(5.0, 5.0, 2.0, 12, 12).unwrap();
    let b = render_gaussian(6.5, 5.5, 1.5, 12, 12).unwrap();
    let stack = collate_by_class(&[(&a, 0), (&b, 0)], 1, 12, 12).unwrap();
    for y in 0..12 {
        for x in 0..12 {
            let va = a.values[y * 12 + x];
            let vb = b.values[y * 12 + x];
            let expect = if va > vb { va } else { vb };
            assert!((stack.maps[0].values[y * 12 + x] - expect).abs() < 1e-7);
        }
    }
}

#[test]
fn collate_rejects_mismatched_shapes() {
    let a = render_gaussian(1.0, 1.0, 1.0, 4, 4).unwrap();
    assert!(collate_by_class(&[(&a, 0)], 2, 5, 4).is_err());
    assert!(collate_by_class(&[(&a, 2)], 2, 4, 4).is_err());
}

#[test]
fn uniform_resizes_to_uniform() {
    let h = Heatmap {
        width: 10,
        height: 6,
        values: vec![0.3; 60],
    };
    let r = resize_normalize(&h, 3, 4).unwrap();
    for v in r.values {
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }
}

#[test]
fn degenerate_resize_is_an_error() {
    let h = Heatmap::zeros(8, 8);
    assert!(matches!(resize_normalize(&h, 2, 2), Err(CoreError::DegenerateHeatmap(_))));
}

/// Explicit-loop bilinear oracle, written independently of `resize_bilinear`.
fn oracle_resize_normalize(src: &[Vec<f64>], out_h: usize, out_w: usize) -> Vec<Vec<f64>> {
    let in_h = src.len();
    let in_w = src[0].len();
    let mut out = vec![vec![0.0; out_w]; out_h];
    for i in 0..out_h {
        for j in 0..out_w {
            let mut sy = (i as f64 + 0.5) * (in_h as f64 / out_h as f64) - 0.5;
            let mut sx = (j as f64 + 0.5) * (in_w as f64 / out_w as f64) - 0.5;
            if sy < 0.0 {
                sy = 0.0;
            }
            if sx < 0.0 {
                sx = 0.0;
            }
            if sy > (in_h - 1) as f64 {
                sy = (in_h - 1) as f64;
            }
            if sx > (in_w - 1) as f64 {
                sx = (in_w - 1) as f64;
            }
            let y0 = sy as usize;
            let x0 = sx as usize;
            let y1 = if y0 + 1 < in_h { y0 + 1 } else { y0 };
            let x1 = if x0 + 1 < in_w { x0 + 1 } else { x0 };
            let wy = sy - y0 as f64;
            let wx = sx - x0 as f64;
            out[i][j] = src[y0][x0] * (1.0 - wy) * (1.0 - wx)
                + src[y0][x1] * (1.0 - wy) * wx
                + src[y1][x0] * wy * (1.0 - wx)
                + src[y1][x1] * wy * wx;
        }
    }
    let mut total = 0.0;
    for row in &out {
        for v in row {
            total += v;
        }
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[test]
fn resize_16_to_4_matches_oracle() {
    let h = render_gaussian(6.3, 9.1, 2.0, 16, 16).unwrap();
    let grid: Vec<Vec<f64>> = (0..16).map(|y| (0..16).map(|x| h.get(x, y)).collect()).collect();
    let expect = oracle_resize_normalize(&grid, 4, 4);
    let got = resize_normalize(&h, 4, 4).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            assert!((got.get(x, y) - expect[y][x]).abs() < 1e-6);
        }
    }
    assert!((got.sum() - 1.0).abs() < 1e-6);
}

proptest! {
    #[test]
    fn resized_gaussians_sum_to_one(x in 0.0f64..63.0, y in 0.0f64..63.0, sigma in 1.0f64..9.0) {
        let h = render_gaussian(x, y, sigma, 64, 64).unwrap();
        let r = resize_normalize(&h, 16, 16).unwrap();
        prop_assert!((r.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn collation_is_permutation_invariant_and_monotone(
        pts in proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0, 0usize..3), 0..6),
        extra in (0.0f64..20.0, 0.0f64..20.0, 0usize..3),
    ) {
        let maps: Vec<Heatmap> = pts.iter().map(|&(x, y, _)| render_gaussian(x, y, 1.5, 20, 20).unwrap()).collect();
        let inputs: Vec<(&Heatmap, usize)> = maps.iter().zip(&pts).map(|(m, p)| (m, p.2)).collect();
        let mut reversed = inputs.clone();
        reversed.reverse();
        let a = collate_by_class(&inputs, 3, 20, 20).unwrap();
        let b = collate_by_class(&reversed, 3, 20, 20).unwrap();
        prop_assert_eq!(&a, &b);

        let extra_map = render_gaussian(extra.0, extra.1, 1.5, 20, 20).unwrap();
        let mut more = inputs.clone();
        more.push((&extra_map, extra.2));
        let c = collate_by_class(&more, 3, 20, 20).unwrap();
        for (before, after) in a.maps.iter().zip(&c.maps) {
            for (u, v) in before.values.iter().zip(&after.values) {
                prop_assert!(v >= u);
            }
        }
    }
}
