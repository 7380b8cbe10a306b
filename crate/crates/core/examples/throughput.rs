//! Times forward/backward/update of the desk configuration on random input.
use std::time::Instant;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use dyngest::net::{compute_loss, PatchLabels};
use dyngest::{GestureNet, NetworkConfig, Pipeline};
use dyngest_tensor::{sgd_momentum_step, Graph, Mode, Tensor};
use rand::{Rng, SeedableRng};

fn main() {
    let batch: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    for pipeline in [Pipeline::Dynamic, Pipeline::Static] {
        let cfg = NetworkConfig::desk();
        let mut net = GestureNet::<f32>::new(cfg.clone(), pipeline).unwrap();
        let x: Vec<f32> = (0..batch * 3 * 16 * 96 * 96).map(|_| rng.random::<f32>()).collect();
        let x = Tensor::new(vec![batch, 3, 16, 96, 96], x).unwrap();
        let labels: Vec<PatchLabels> =
            (0..batch).map(|_| PatchLabels { rows: 2, cols: 3, labels: vec![0, 1, 0, 0, 0, 0] }).collect();
        let y: Vec<usize> = (0..batch).map(|i| i % 10).collect();
        let (mut tf, mut tb, mut tu) = (0.0, 0.0, 0.0);
        let steps: usize = std::env::var("STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(5);
        for _ in 0..steps {
            let t0 = Instant::now();
            let mut g = Graph::new(Mode::Train);
            let xv = g.input(x.clone());
            let fwd = net.forward(&mut g, xv).unwrap();
            let (loss, _) = compute_loss(&mut g, &fwd, &y, &labels, cfg.lambda).unwrap();
            let t1 = Instant::now();
            net.store_mut().zero_grad();
            g.backward_into(loss, net.store_mut()).unwrap();
            let t2 = Instant::now();
            net.store_mut().commit_stats(g.stat_updates());
            sgd_momentum_step(net.store_mut(), 1e-3, 0.9).unwrap();
            let t3 = Instant::now();
            tf += (t1 - t0).as_secs_f64();
            tb += (t2 - t1).as_secs_f64();
            tu += (t3 - t2).as_secs_f64();
        }
        let per_clip = (tf + tb + tu) / (steps * batch) as f64;
        let macs = net.window_flops().unwrap().total() as f64;
        println!(
            "{pipeline}: fwd {:.1} ms, bwd {:.1} ms, upd {:.1} ms per step; {:.2} ms/clip; fwd MACs/clip {:.1}M; est 1600x30 epochs: {:.0} s",
            tf / steps as f64 * 1e3,
            tb / steps as f64 * 1e3,
            tu / steps as f64 * 1e3,
            per_clip * 1e3,
            macs / 1e6,
            per_clip * 1600.0 * 30.0
        );
    }
}
