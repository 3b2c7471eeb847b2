use super::value::{Grads, ParamStore};
use crate::error::{Error, Result};

pub const FD_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares analytic gradients against central differences.
///
/// `f` evaluates the scalar objective at the given parameters and adds its
/// gradient into the supplied buffer. Every trainable scalar is perturbed by
/// `±FD_EPSILON`; the relative error is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(params: &ParamStore, mut f: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Grads) -> Result<f64>,
{
    let mut analytic = Grads::zeros_like(params);
    let base = f(params, &mut analytic)?;
    if !base.is_finite() {
        return Err(Error::GradCheck {
            param: "<base>".into(),
            index: 0,
        });
    }
    let mut scratch = Grads::zeros_like(params);
    let mut work = params.clone();
    let mut report = Vec::new();
    for id in params.ids() {
        if !params.is_trainable(id) {
            continue;
        }
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..params.get(id).len() {
            let orig = work.get(id).data[i];
            work.get_mut(id).data[i] = orig + FD_EPSILON;
            let up = f(&work, &mut scratch)?;
            work.get_mut(id).data[i] = orig - FD_EPSILON;
            let down = f(&work, &mut scratch)?;
            work.get_mut(id).data[i] = orig;
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::GradCheck {
                    param: check.name,
                    index: i,
                });
            }
            let numeric = (up - down) / (2.0 * FD_EPSILON);
            let a = analytic.get(id)[i];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if i == 0 || rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
    })
}
