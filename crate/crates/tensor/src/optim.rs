use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::param::ParamStore;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// One SGD step with classical momentum: `v <- mu*v + g; p <- p - lr*v`.
pub fn sgd_momentum_step<T: Element>(store: &mut ParamStore<T>, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
        return Err(TensorError::Config(format!(
            "invalid SGD hyperparameters lr={lr} momentum={momentum}"
        )));
    }
    let missing: Vec<String> =
        store.params().iter().filter(|p| p.grad.is_none()).map(|p| p.name.clone()).collect();
    if !missing.is_empty() {
        return Err(TensorError::MissingGrad(missing));
    }
    let lr = T::from_f64_lossy(lr);
    let mu = T::from_f64_lossy(momentum);
    for p in store.params_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        for ((w, v), &g) in p.value.data_mut().iter_mut().zip(p.momentum.data_mut()).zip(grad.data()) {
            *v = mu * *v + g;
            *w -= lr * *v;
        }
    }
    Ok(())
}
