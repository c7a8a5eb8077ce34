//! Central finite differences over a parameter store.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::params::ParamStore;

/// Per-parameter central-difference gradients of `f` at the current values,
/// in store order and with each parameter's row-major layout.
///
/// `f` must be deterministic. Every coordinate is restored after probing.
pub fn finite_difference_grad<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut grads = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).value.len();
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = f(store);
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = f(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective at `{}`[{i}] ± {eps}",
                    store.get(id).name()
                )));
            }
            g.push((plus - minus) / (2.0 * eps));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// `|analytic − numeric| ≤ atol + rtol·|numeric|`.
pub fn grad_close(analytic: f64, numeric: f64, rtol: f64, atol: f64) -> bool {
    (analytic - numeric).abs() <= atol + rtol * numeric.abs()
}

/// Relative error with a floor on the denominator so that two tiny gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
