use super::params::{GradSet, ParamSet};
use crate::error::{Error, Result};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|a − n|` over all coordinates.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares `analytic(θ)` with `(f(θ+h) − f(θ−h)) / 2h` on every coordinate.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<L, A>(
    loss_fn: L,
    analytic: A,
    params: &ParamSet,
    h: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamSet) -> Result<f64>,
    A: Fn(&ParamSet) -> Result<GradSet>,
{
    let grads = analytic(params)?;
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite ({base})")));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for i in 0..params.get(id).len() {
            let original = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = original + h;
            let plus = loss_fn(&probe)?;
            probe.get_mut(id).data_mut()[i] = original - h;
            let minus = loss_fn(&probe)?;
            probe.get_mut(id).data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite when perturbing `{}`[{i}]",
                    params.name(id)
                )));
            }

            let numeric = (plus - minus) / (2.0 * h);
            let a = grads.value(id, i);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn quadratic_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::from_vec(&[3], vec![0.5, -1.5, 2.0]).unwrap())
            .unwrap();
        p.insert("b", Tensor::from_vec(&[2, 2], vec![1.0, 0.25, -0.75, 3.0]).unwrap())
            .unwrap();
        p
    }

    fn half_norm(p: &ParamSet) -> Result<f64> {
        Ok(0.5 * p.iter().map(|(_, _, t)| t.sum_squares()).sum::<f64>())
    }

    fn scaled_identity(p: &ParamSet, k: f64) -> GradSet {
        let mut g = GradSet::zeros_like(p);
        for (id, _, t) in p.iter() {
            let mut c = t.clone();
            c.scale(k);
            g.set(id, c);
        }
        g
    }

    #[test]
    fn exact_gradient_passes() {
        let p = quadratic_params();
        let r = grad_check(half_norm, |p| Ok(scaled_identity(p, 1.0)), &p, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 7);
    }

    #[test]
    fn doubled_gradient_reports_half() {
        // analytic 2θ vs numeric θ: |2θ − θ| / |2θ| = 0.5
        let p = quadratic_params();
        let r = grad_check(half_norm, |p| Ok(scaled_identity(p, 2.0)), &p, 1e-5).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let p = quadratic_params();
        let res = grad_check(|_| Ok(f64::NAN), |p| Ok(GradSet::zeros_like(p)), &p, 1e-5);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
