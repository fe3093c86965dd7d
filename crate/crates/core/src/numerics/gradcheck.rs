//! Central finite-difference oracle for checking analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamSet, Tensor};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-element relative error over all inputs.
    pub max_rel_error: f64,
    /// `(tensor index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub elements_checked: usize,
    /// Analytic gradients, one per input tensor.
    pub analytic: Vec<Tensor<f64>>,
}

/// Denominator floor for the relative error. Elements whose gradients are
/// both smaller than this are compared on an absolute scale instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`, element by element.
///
/// `f` receives a fresh graph plus one gradient-tracking leaf per input and
/// must return a single-element node.
pub fn grad_check<Func>(f: Func, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    Func: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut params = ParamSet::new();
    for (i, t) in inputs.iter().enumerate() {
        params.add(format!("input.{i}"), t.clone());
    }
    grad_check_params(
        |g, p| {
            let ids: Vec<_> = p.ids().map(|id| g.param(p, id)).collect();
            f(g, &ids)
        },
        &params,
        h,
    )
}

/// Like [`grad_check`], but differentiates with respect to every tensor of
/// a [`ParamSet`] that the function binds through [`Graph::param`].
/// Tensors the function never binds get a zero analytic gradient.
pub fn grad_check_params<Func>(f: Func, params: &ParamSet<f64>, h: f64) -> Result<GradCheckReport>
where
    Func: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<NodeId>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        let v = g.value(out);
        if v.len() != 1 || !v.item().is_finite() {
            return Err(Error::Oracle(format!("function produced {:?}", v.data())));
        }
        Ok(v.item())
    };

    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    if g.value(out).len() != 1 || !g.value(out).is_finite() {
        return Err(Error::Oracle(format!("function produced {:?}", g.value(out).data())));
    }
    let analytic: Vec<Tensor<f64>> = g
        .backward(out)?
        .for_params(&g, params)
        .into_iter()
        .zip(params.tensors())
        .map(|(grad, t)| grad.unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        elements_checked: 0,
        analytic: Vec::new(),
    };
    let mut probe = params.clone();
    for (i, t) in params.tensors().iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            probe.tensors_mut()[i].data_mut()[j] = orig + h;
            let plus = eval(&probe)?;
            probe.tensors_mut()[i].data_mut()[j] = orig - h;
            let minus = eval(&probe)?;
            probe.tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].data()[j], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
            report.elements_checked += 1;
        }
    }
    report.analytic = analytic;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic() {
        let x = Tensor::from_f64(&[4], &[0.3, -1.2, 2.0, 0.7]).unwrap();
        let report = grad_check(
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
        assert_eq!(report.elements_checked, 4);
    }

    #[test]
    fn non_finite_output_is_an_oracle_error() {
        let x = Tensor::from_f64(&[1], &[0.0]).unwrap();
        let res = grad_check(|g, _ids| Ok(g.constant(Tensor::scalar(f64::NAN))), &[x], 1e-5);
        assert!(matches!(res, Err(Error::Oracle(_))));
    }
}
