use super::{Graph, ParamSet, Tensor, Var};
use crate::error::TensorError;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked elements of `|a - n| / max(1, |a|, |n|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Check `f` at `x` over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport, TensorError>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Result<Var<'g, f64>, TensorError>,
{
    let idx: Vec<usize> = (0..x.len()).collect();
    let graph = Graph::new();
    let leaf = graph.leaf(x.clone());
    let loss = f(&graph, leaf)?;
    let grads = graph.backward(loss)?;
    let analytic = grads
        .get(&leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let eval = |t: &Tensor<f64>| -> Result<f64, TensorError> {
        let g = Graph::new();
        let v = g.input(t.clone());
        Ok(f(&g, v)?.value().item())
    };
    grad_check_indices(&analytic, eval, x, &idx, eps)
}

/// Compare a precomputed analytic gradient against central differences of
/// `eval` on the given flat indices of `x`.
pub fn grad_check_indices<E>(
    analytic: &Tensor<f64>,
    eval: E,
    x: &Tensor<f64>,
    indices: &[usize],
    eps: f64,
) -> Result<GradCheckReport, TensorError>
where
    E: Fn(&Tensor<f64>) -> Result<f64, TensorError>,
{
    if analytic.shape() != x.shape() {
        return Err(TensorError::shape(
            "grad_check",
            format!("{:?}", x.shape()),
            analytic.shape(),
        ));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() {
            report = GradCheckReport {
                max_rel_error: if rel.is_nan() { f64::INFINITY } else { rel },
                worst_index: i,
                analytic: a,
                numeric,
                checked: report.checked,
            };
        }
    }
    Ok(report)
}

/// Check the gradient of a loss built from `params` with respect to the
/// entries `indices` of the parameter `name`. `f` must bind parameters via
/// [`Graph::param`] so the analytic gradient reaches them.
pub fn param_grad_check<F>(
    params: &ParamSet<f64>,
    name: &str,
    f: F,
    indices: &[usize],
    eps: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamSet<f64>) -> Result<Var<'g, f64>, TensorError>,
{
    let x = params.value(name)?.clone();
    let mut work = params.clone();
    work.zero_grad();
    let analytic = {
        let g = Graph::new();
        let loss = f(&g, &work)?;
        g.backward_into(loss, &mut work)?;
        work.get(name)
            .and_then(|p| p.grad.clone())
            .unwrap_or_else(|| Tensor::zeros(x.shape()))
    };
    let eval = |t: &Tensor<f64>| -> Result<f64, TensorError> {
        let mut probe = params.clone();
        probe.set(name, t.clone());
        let g = Graph::new();
        Ok(f(&g, &probe)?.value().item())
    };
    grad_check_indices(&analytic, eval, &x, indices, eps)
}
