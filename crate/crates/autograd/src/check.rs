//! Central finite-difference gradient checks.
//!
//! The relative error of a gradient is `|g_a - g_n| / max(|g_a|, |g_n|)`
//! over the whole flattened gradient (Euclidean norms), which stays
//! meaningful when individual entries are zero.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Per input: relative error of the analytic gradient.
    pub rel_errors: Vec<f64>,
    /// Per input: largest absolute entry-wise difference.
    pub abs_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Compare analytic gradients of the scalar built by `f` against central
/// differences with step `eps`, for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.parameter(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rel_errors = Vec::new();
    let mut abs_errors = Vec::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; inputs[i].len()],
        };
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *num = (plus - minus) / (2.0 * eps);
        }
        abs_errors.push(analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max));
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { rel_errors, abs_errors })
}
