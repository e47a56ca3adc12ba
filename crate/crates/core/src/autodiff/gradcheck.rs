use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn max_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `eps`, over every coordinate of every input.
/// Returns the largest [`max_rel_error`].
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    grad_check_strided(f, inputs, eps, usize::MAX)
}

/// Like [`grad_check`] but probes at most `per_input` evenly spaced
/// coordinates of each input, for models too large to sweep exhaustively.
pub fn grad_check_strided<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
    per_input: usize,
) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .map(Element::f64)
            .ok_or_else(|| Error::domain("grad_check", "closure must return a scalar"))
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(per_input.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let base = input.data()[j];
            work[i].data_mut()[j] = base + T::c(eps);
            let plus = eval(&work)?;
            work[i].data_mut()[j] = base - T::c(eps);
            let minus = eval(&work)?;
            work[i].data_mut()[j] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[j].f64());
            worst = worst.max(max_rel_error(analytic, numeric));
        }
    }
    Ok(worst)
}
