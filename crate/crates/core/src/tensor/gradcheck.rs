//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamId, ParamSet, Var};
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

fn scalar(g: &Graph<'_>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar loss".into()));
    }
    Ok(t.data()[0])
}

/// Compares the tape's gradients of `loss_fn` against central differences
/// with step `step` for every entry of every parameter in `only` (all
/// parameters when `only` is empty).
pub fn check_gradients<F>(
    params: &ParamSet,
    only: &[ParamId],
    step: f64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let ids: Vec<ParamId> = if only.is_empty() {
        params.ids().collect()
    } else {
        only.to_vec()
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = loss_fn(&mut g)?;
        scalar(&g, loss)
    };

    for id in ids {
        let len = params.get(id).len();
        let grad = analytic.param(id);
        for k in 0..len {
            let original = params.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original - step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.map_or(0.0, |g| g[k]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
