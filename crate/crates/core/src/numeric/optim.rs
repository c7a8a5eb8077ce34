use alloc::format;

use crate::error::{Error, Result};
use crate::numeric::params::ParamStore;

/// One SGD-with-momentum update over every parameter:
///
/// ```text
/// buffer ← momentum·buffer + (grad + weight_decay·value)
/// value  ← value − lr·buffer
/// ```
///
/// The update is all-or-nothing: gradients are checked for finiteness before
/// any value changes.
pub fn sgd_step(store: &mut ParamStore, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
        return Err(Error::Numeric(format!("gradient of `{}`", p.name())));
    }
    for p in store.iter_mut() {
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let buf = p.momentum.data_mut();
        for ((v, g), b) in value.iter_mut().zip(grad).zip(buf.iter_mut()) {
            *b = momentum * *b + (g + weight_decay * *v);
            *v -= lr * *b;
        }
    }
    Ok(())
}
