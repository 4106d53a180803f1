//! Central finite-difference verification of analytic gradients.

use super::{Graph, GraphError, NodeId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Max over checked coordinates of |analytic − numeric| / (|analytic| + 1e-8).
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±ε perturbation changed a ReLU/clamp branch.
    pub skipped_kinks: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
}

/// Compares reverse-mode gradients of `f` with central differences over every
/// parameter coordinate. `f` must rebuild its computation from the store on
/// each call and must not apply dropout.
pub fn finite_difference_check<F>(store: &mut ParamStore, epsilon: f64, f: F) -> Result<FdReport, GraphError>
where
    F: Fn(&mut Graph, &ParamStore) -> NodeId,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(GraphError::BadEpsilon(epsilon));
    }
    let eval = |store: &ParamStore| -> Result<(f64, u64), GraphError> {
        let mut g = Graph::with_kink_tracking();
        let out = f(&mut g, store);
        if g.dropout_active() {
            return Err(GraphError::DropoutEnabled);
        }
        g.check_finite()?;
        Ok((g.scalar(out), g.kink_signature()))
    };

    let mut g = Graph::with_kink_tracking();
    let out = f(&mut g, store);
    if g.dropout_active() {
        return Err(GraphError::DropoutEnabled);
    }
    let base_sig = g.kink_signature();
    let grads = g.backward(out)?;

    let mut report = FdReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0, worst: None, worst_values: None };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; store.get(id).len()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).values[i];
            store.get_mut(id).values[i] = orig + epsilon;
            let plus = eval(store);
            store.get_mut(id).values[i] = orig - epsilon;
            let minus = eval(store);
            store.get_mut(id).values[i] = orig;
            let ((fp, sp), (fm, sm)) = (plus?, minus?);
            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / (a.abs() + 1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((store.get(id).name.clone(), i));
                    report.worst_values = Some((a, numeric));
                }
            }
        }
    }
    Ok(report)
}
