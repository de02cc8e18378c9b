//! Central finite-difference gradient checking.
//!
//! The checker only evaluates forward passes, so it is independent of the
//! reverse pass it verifies.

use super::{Graph, Result, Tensor, Var};

/// Relative error `|a - b| / max(|a| + |b|, floor)` over flattened vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Central differences of a scalar function over every entry of `inputs`.
pub fn numeric_gradients(
    inputs: &[Tensor],
    h: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Vec::with_capacity(inputs[t].len());
        for k in 0..inputs[t].len() {
            let orig = work[t].data()[k];
            work[t].data_mut()[k] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[k] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[k] = orig;
            grad.push((plus - minus) / (2.0 * h));
        }
        out.push(grad);
    }
    out
}

/// Builds `build(graph, leaves)` with every input as a trainable leaf, runs
/// backward, and returns the worst per-input relative error against central
/// differences.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], |gr| gr.data().to_vec()))
        .collect();
    let numeric = numeric_gradients(inputs, h, |xs| {
        let mut g = Graph::new();
        let leaves: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &leaves).expect("forward succeeded once already");
        g.value(loss).item()
    });
    Ok(analytic.iter().zip(&numeric).map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max))
}
