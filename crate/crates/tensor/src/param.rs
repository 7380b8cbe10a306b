use std::collections::HashMap;

use crate::element::Element;
use crate::error::{config_err, Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StatsId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient slot and SGD momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub momentum: Tensor<T>,
}

/// Batch-norm running mean/variance for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

/// One pending running-statistics update produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub stats: StatsId,
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
}

pub const BN_MOMENTUM: f64 = 0.1;

/// All parameters and non-trainable buffers of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    stats: Vec<RunningStats<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), stats: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(config_err(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.params.len());
        let momentum = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None, momentum });
        Ok(id)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        let id = StatsId(self.stats.len());
        self.stats.push(RunningStats {
            name: name.into(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            initialized: false,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats<T> {
        &self.stats[id.0]
    }

    pub fn all_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn all_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Sets every gradient slot to zeros.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.data_mut().iter_mut().for_each(|v| *v = T::zero()),
                None => p.grad = Some(Tensor::zeros(p.value.shape())),
            }
        }
    }

    /// Adds `grad` into the gradient slot of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        if grad.len() != p.value.numel() {
            return Err(TensorError::Graph(format!(
                "gradient for '{}' has {} values, expected {}",
                p.name,
                grad.len(),
                p.value.numel()
            )));
        }
        let slot = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for (s, g) in slot.data_mut().iter_mut().zip(grad) {
            *s += *g;
        }
        Ok(())
    }

    /// Applies running-statistics updates with momentum [`BN_MOMENTUM`].
    pub fn commit_stats(&mut self, updates: &[StatUpdate<T>]) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        for u in updates {
            let s = &mut self.stats[u.stats.0];
            for c in 0..s.mean.len() {
                s.mean[c] = (T::one() - m) * s.mean[c] + m * u.batch_mean[c];
                s.var[c] = (T::one() - m) * s.var[c] + m * u.batch_var_unbiased[c];
            }
            s.initialized = true;
        }
    }

    /// Resets all momentum buffers to zero.
    pub fn reset_momentum(&mut self) {
        for p in &mut self.params {
            p.momentum.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Converts every tensor to another element type, dropping gradients.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    momentum: p.momentum.cast(),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                    var: s.var.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                    initialized: s.initialized,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("a.weight", Tensor::zeros(&[3])).is_err());
        assert_eq!(s.get(s.id("a.weight").unwrap()).momentum.shape(), &[2]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::zeros(&[2])).unwrap();
        s.accumulate_grad(id, &[1.0, 2.0]).unwrap();
        s.accumulate_grad(id, &[1.0, 2.0]).unwrap();
        assert_eq!(s.get(id).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
        s.zero_grad();
        assert_eq!(s.get(id).grad.as_ref().unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn stat_commit_uses_momentum() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_stats("bn", 1);
        s.commit_stats(&[StatUpdate { stats: id, batch_mean: vec![1.0], batch_var_unbiased: vec![3.0] }]);
        let st = s.stats(id);
        assert!(st.initialized);
        assert!((st.mean[0] - 0.1).abs() < 1e-15);
        assert!((st.var[0] - (0.9 + 0.3)).abs() < 1e-15);
    }
}
