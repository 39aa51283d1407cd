use crate::numerics::{Gradients, ParamStore};

/// Denominator floor for [`relative_error`]: below this magnitude the
/// comparison degrades gracefully to an absolute one.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(move |e| !(e.rel_error < self.tol))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }
}

/// Compares `analytic` against central differences
/// `(f(p + step) - f(p - step)) / (2 step)` for every scalar of every
/// trainable parameter.
pub fn grad_check(
    f: impl Fn(&ParamStore) -> f64,
    store: &ParamStore,
    analytic: &Gradients,
    step: f64,
    tol: f64,
) -> GradCheckReport {
    let mut work = store.clone();
    let mut entries = Vec::new();
    for id in store.ids() {
        let entry = store.entry(id);
        if !entry.trainable {
            continue;
        }
        let grad = analytic.get_or_zeros(id, entry.value.shape());
        for j in 0..entry.value.len() {
            let orig = entry.value.data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let plus = f(&work);
            work.get_mut(id).data_mut()[j] = orig - step;
            let minus = f(&work);
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[j];
            entries.push(GradCheckEntry {
                param: entry.name.clone(),
                index: j,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    GradCheckReport { tol, entries }
}
