//! Per-layer forward/backward timings for the desk shapes.

use std::time::Instant;

use dyngest_tensor::{Graph, Mode, Tensor};

fn time_conv(label: &str, x: [usize; 5], cout: usize, stride: [usize; 3], input_grad: bool) {
    let xin = Tensor::<f32>::full(&x, 0.5);
    let w = Tensor::<f32>::full(&[cout, x[1], 3, 3, 3], 0.01);
    let reps = 3;
    let (mut tf, mut tb) = (0.0, 0.0);
    for _ in 0..reps {
        let mut g = Graph::new(Mode::Train);
        let xv = if input_grad { g.leaf(xin.clone()) } else { g.input(xin.clone()) };
        let wv = g.leaf(w.clone());
        let t0 = Instant::now();
        let y = g.conv3d(xv, wv, None, stride, [1, 1, 1]).unwrap();
        let s = g.sum(y);
        let t1 = Instant::now();
        g.backward(s).unwrap();
        let t2 = Instant::now();
        tf += (t1 - t0).as_secs_f64();
        tb += (t2 - t1).as_secs_f64();
    }
    let macs = g_macs(x, cout, stride);
    println!(
        "{label:>28}: fwd {:7.2} ms ({:5.1} GMAC/s)  bwd {:7.2} ms",
        tf / reps as f64 * 1e3,
        macs / (tf / reps as f64) / 1e9,
        tb / reps as f64 * 1e3
    );
}

fn g_macs(x: [usize; 5], cout: usize, s: [usize; 3]) -> f64 {
    let cells: usize = (0..3).map(|i| (x[2 + i] + 2 - 3) / s[i] + 1).product();
    (x[0] * cells * cout * x[1] * 27) as f64
}

fn main() {
    time_conv("extractor conv1", [8, 3, 16, 96, 96], 4, [2, 2, 2], false);
    time_conv("extractor conv2", [8, 4, 8, 48, 48], 16, [1, 2, 2], true);
    time_conv("selector conv1 (48 patches)", [48, 16, 8, 12, 8], 4, [1, 1, 1], true);
    time_conv("selector conv2", [48, 4, 4, 6, 4], 4, [1, 1, 1], true);
    time_conv("cls stage0 conv1", [8, 16, 8, 12, 8], 16, [1, 2, 2], true);
    time_conv("cls stage0 conv2", [8, 16, 8, 6, 4], 16, [1, 1, 1], true);
    time_conv("cls stage1 conv1", [8, 16, 8, 6, 4], 32, [2, 2, 2], true);
    time_conv("cls stage2 conv2", [8, 64, 2, 3, 2], 64, [1, 1, 1], true);
    time_conv("static stage0 conv1", [8, 16, 8, 24, 24], 16, [1, 2, 2], true);
    time_conv("static stage0 conv2", [8, 16, 8, 12, 12], 16, [1, 1, 1], true);
}
