#![allow(dead_code)]

use std::path::Path;

use dyngest::synthdata::{generate_dataset, Dataset};
use dyngest::{DataConfig, NetworkConfig};

pub fn small_data(num_clips: usize, seed: u64) -> DataConfig {
    DataConfig { num_clips, seed, ..DataConfig::default() }
}

/// Generates a dataset for `NetworkConfig::small()` into `dir`.
pub fn small_dataset(dir: &Path, num_clips: usize, seed: u64) -> Dataset {
    generate_dataset(dir, NetworkConfig::small().input_dims, &small_data(num_clips, seed), false).unwrap();
    Dataset::open(dir).unwrap()
}

use dyngest::net::GestureNet;
use dyngest::Pipeline;
use dyngest_tensor::{Graph, Mode, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// A `small()` model whose batchnorm running statistics were initialized
/// from one random batch, so it can run in eval mode.
pub fn eval_ready(pipeline: Pipeline, seed: u64) -> GestureNet<f32> {
    let config = NetworkConfig { seed, ..NetworkConfig::small() };
    let mut net = GestureNet::<f32>::new(config, pipeline).unwrap();
    let [t, c, h, w] = net.config().input_dims;
    let mut g = Graph::new(Mode::Train);
    let x = g.input(random_tensor(&[4, c, t, h, w], seed));
    net.forward(&mut g, x).unwrap();
    net.store_mut().commit_stats(g.stat_updates());
    net
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}
