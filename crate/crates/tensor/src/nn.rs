//! Parameterized layers built on the graph operations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore, StatsId};
use crate::tensor::Tensor;

/// Weights drawn from `N(0, gain / fan_in)`.
pub fn kaiming_normal<T: Element>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let std = (gain / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches sample count")
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        let weight = store.add(format!("{name}.weight"), kaiming_normal(&shape, fan_in, 2.0, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?) } else { None };
        Ok(Conv3d { weight, bias, stride, padding })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv3d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm3d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BatchNorm3d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[channels]))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        let stats = store.add_stats(name, channels);
        Ok(BatchNorm3d { gamma, beta, stats })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batchnorm(x, gamma, beta, store, self.stats)
    }
}

/// `conv3d -> batchnorm -> relu`.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = Conv3d::new(store, &format!("{name}.conv"), in_channels, out_channels, kernel, stride, padding, true, rng)?;
        let bn = BatchNorm3d::new(store, &format!("{name}.bn"), out_channels)?;
        Ok(ConvBnRelu { conv, bn })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.forward_pre_activation(g, store, x)?;
        Ok(g.relu(y))
    }

    /// Convolution and normalization without the trailing ReLU.
    pub fn forward_pre_activation<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        self.bn.forward(g, store, y)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_normal(&[out_features, in_features], in_features, gain, rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}
