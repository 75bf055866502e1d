use c3det_autograd::check::check_gradients;
use c3det_autograd::{Graph, Result, Tensor, Var};

/// Small deterministic generator so the instances are reproducible.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| self.next()).collect()).unwrap()
    }
}

/// Reduce to a scalar with fixed random weights so every output entry matters.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = Lcg(seed);
    let r = rng.tensor(g.shape(x));
    let value: f64 = g.value(x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    g.external_scalar(x, value, r)
}

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;

#[test]
fn conv2d_strided_padded() {
    let mut rng = Lcg(1);
    let inputs = [rng.tensor(&[3, 7, 6]), rng.tensor(&[4, 3, 3, 3]), rng.tensor(&[4])];
    let r = check_gradients(&inputs, EPS, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
        assert_eq!(g.shape(y), &[4, 4, 3]);
        project(g, y, 11)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn conv2d_pointwise() {
    let mut rng = Lcg(2);
    let inputs = [rng.tensor(&[5, 4, 4]), rng.tensor(&[3, 5, 1, 1]), rng.tensor(&[3])];
    let r = check_gradients(&inputs, EPS, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
        project(g, y, 12)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn instance_norm_then_relu() {
    let mut rng = Lcg(3);
    let inputs = [rng.tensor(&[3, 5, 4]), rng.tensor(&[3]), rng.tensor(&[3])];
    let r = check_gradients(&inputs, EPS, |g, v| {
        let y = g.instance_norm(v[0], v[1], v[2], 1e-5)?;
        let y = g.relu(y);
        project(g, y, 13)
    })
    .unwrap();
    assert!(r.passes(1e-5), "{r:?}");
}

#[test]
fn concat_narrow_add_scale() {
    let mut rng = Lcg(4);
    let inputs = [rng.tensor(&[2, 3, 3]), rng.tensor(&[3, 3, 3])];
    let r = check_gradients(&inputs, EPS, |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        let a = g.narrow(c, 1, 3)?;
        let b = g.narrow(c, 2, 3)?;
        let s = g.add(a, b)?;
        let s = g.scale(s, 0.7);
        project(g, s, 14)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn pool_correlate_class_max() {
    let mut rng = Lcg(5);
    let mut w1 = rng.tensor(&[4, 5]);
    let mut w2 = rng.tensor(&[4, 5]);
    for w in [&mut w1, &mut w2] {
        let s: f64 = w.data().iter().map(|v| v.abs()).sum();
        w.data_mut().iter_mut().for_each(|v| *v = v.abs() / s);
    }
    let inputs = [rng.tensor(&[3, 4, 5])];
    let r = check_gradients(&inputs, EPS, |g, v| {
        let t1 = g.weighted_pool(v[0], &w1)?;
        let t2 = g.weighted_pool(v[0], &w2)?;
        let m1 = g.correlate(t1, v[0])?;
        let m2 = g.correlate(t2, v[0])?;
        let out = g.class_max(&[(m1, 1), (m2, 1), (m2, 0)], 3, 4, 5)?;
        project(g, out, 15)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn class_max_routes_to_the_winner() {
    let mut g = Graph::<f64>::new();
    let a = g.parameter(Tensor::from_vec(&[1, 2], vec![1.0, 5.0]).unwrap());
    let b = g.parameter(Tensor::from_vec(&[1, 2], vec![3.0, 2.0]).unwrap());
    let m = g.class_max(&[(a, 0), (b, 0)], 2, 1, 2).unwrap();
    assert_eq!(g.value(m).data(), &[3.0, 5.0, 0.0, 0.0]);
    let s = g.sum(m);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0]);
    assert_eq!(grads.get(b).unwrap().data(), &[1.0, 0.0]);
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[1, 3, 3], 1.0));
    let w = g.parameter(Tensor::full(&[2, 1, 3, 3], 0.5));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none());
    assert!(grads.get(w).is_some());
}

#[test]
fn ceil_division_output_shape() {
    let mut g = Graph::<f32>::new();
    for (h, expect) in [(256, 128), (255, 128), (7, 4)] {
        let x = g.constant(Tensor::zeros(&[3, h, h]));
        let w = g.parameter(Tensor::zeros(&[8, 3, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[8, expect, expect]);
    }
}
