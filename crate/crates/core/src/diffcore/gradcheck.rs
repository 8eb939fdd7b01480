use super::optim::ParamSet;

/// Worst-case disagreement between tape gradients and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Per parameter: name and its worst relative error.
    pub per_param: Vec<(String, f64)>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients currently stored in `set` against central
/// differences `(f(p+h) − f(p−h)) / 2h`, one entry at a time. Only trainable
/// parameters are perturbed. `loss` must be deterministic in the parameter
/// values.
pub fn finite_difference_check<S, F>(set: &mut S, h: f64, mut loss: F) -> GradCheckReport
where
    S: ParamSet + ?Sized,
    F: FnMut(&S) -> f64,
{
    let n_params = set.params().len();
    let mut per_param = Vec::with_capacity(n_params);
    let mut worst = 0.0f64;
    let mut checked = 0;

    for pi in 0..n_params {
        let (name, trainable, len) = {
            let p = set.params()[pi];
            (p.name.clone(), p.trainable, p.value.len())
        };
        if !trainable {
            continue;
        }
        let mut param_worst = 0.0f64;
        for k in 0..len {
            let orig = set.params()[pi].value.data()[k];
            let analytic = set.params()[pi].grad.data()[k];

            set.params_mut()[pi].value.data_mut()[k] = orig + h;
            let plus = loss(set);
            set.params_mut()[pi].value.data_mut()[k] = orig - h;
            let minus = loss(set);
            set.params_mut()[pi].value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            param_worst = param_worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
        worst = worst.max(param_worst);
        per_param.push((name, param_worst));
    }

    GradCheckReport {
        max_rel_error: worst,
        per_param,
        entries_checked: checked,
    }
}
