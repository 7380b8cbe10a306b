//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! `ACCEPTANCE_ONLY=1,5,8` runs a subset (the rest print SKIP);
//! `ACCEPTANCE_OUT=<dir>` keeps datasets and training runs there instead of
//! a temporary directory. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use dyngest::evaluator::{flop_report, predict_split, EvalReport};
use dyngest::net::loss::selection_loss;
use dyngest::net::{compute_loss, FlopReport, Forward, GestureNet, PatchLabels, PatchScores, Selection};
use dyngest::stream::{infer_stream, window_of};
use dyngest::synthdata::{generate_dataset, nearest_centroid_accuracy, Dataset, Split};
use dyngest::trainer::{train, TrainOptions, CHECKPOINT_FILE, METRICS_FILE};
use dyngest::{DataConfig, NetworkConfig, Pipeline, TrainConfig};
use dyngest_tensor::gradcheck::{central_difference, max_relative_error};
use dyngest_tensor::{Graph, Mode, ParamStore, Tensor, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

// gradient oracle
const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-3;
const GRAD_BUDGET_S: f64 = 120.0;
const FULL_LOSS_DRAWS: usize = 4;
const FULL_LOSS_ATTEMPTS: u64 = 40;
// FLOP oracle
const FLOP_CASES: usize = 50;
const FLOP_BUDGET_S: f64 = 60.0;
// hand example
const HAND_VALUE: f64 = 2.043304;
const HAND_TOL: f64 = 1e-5;
// grid ordering
const GRID_BUDGET_S: f64 = 60.0;
// desk benchmark
const DESK_CLIPS: usize = 2000;
const DESK_SEEDS: [u64; 3] = [0, 1, 2];
const MIN_TOP1: f64 = 0.90;
const MIN_SELECTION: f64 = 0.95;
const MAX_MAC_RATIO: f64 = 0.7;
const MIN_WINS: usize = 2;
const DESK_BUDGET_S: f64 = 3600.0;
// stream/batch equivalence
const STREAMS: u64 = 20;
// dataset sanity
const MIN_CENTROID_ACC: f64 = 0.6;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- gradients

fn random_tensor(rng: &mut StdRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Magnitudes in [0.05, 1) with random signs, so ReLU kinks stay outside ±h.
fn away_from_zero(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

type Build<'a> = &'a dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

/// `sum(op(inputs) ⊙ P)` for a fixed random projection `P`.
fn projected(mode: Mode, inputs: &[Tensor<f64>], proj: Option<&Tensor<f64>>, build: Build) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = match proj {
        Some(p) => {
            let pv = g.input(p.clone());
            let prod = g.mul(out, pv).unwrap();
            g.sum(prod)
        }
        None => out,
    };
    (g, vars, loss)
}

/// Max relative error between analytic and central-difference gradients
/// with respect to every input.
fn layer_error(rng: &mut StdRng, mode: Mode, inputs: Vec<Tensor<f64>>, build: Build) -> f64 {
    let out_shape = {
        let (g, _, out) = projected(mode, &inputs, None, build);
        g.shape(out).to_vec()
    };
    let proj = random_tensor(rng, &out_shape, -1.0, 1.0);
    let (g, vars, loss) = projected(mode, &inputs, Some(&proj), build);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.get(&g, v).map_or_else(|| vec![0.0; g.value(v).numel()], |t| t.to_f64_vec()))
        .collect();
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.to_f64_vec()).collect();
    let numeric = central_difference(
        |x| {
            let mut off = 0;
            let ts: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    off += n;
                    Tensor::new(s.clone(), x[off - n..off].to_vec()).unwrap()
                })
                .collect();
            let (g, _, loss) = projected(mode, &ts, Some(&proj), build);
            g.value(loss).data()[0]
        },
        &flat,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric, FD_FLOOR).0
}

fn layer_checks(rng: &mut StdRng) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for i in 0..6 {
        let n = rng.random_range(1..3);
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
        let s: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..3));
        let p: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..k[a].div_ceil(2) + 1).min(k[a] - 1));
        let d: [usize; 3] = std::array::from_fn(|a| (k[a] + rng.random_range(0..4)).saturating_sub(2 * p[a]).max(1));
        let x = random_tensor(rng, &[n, ci, d[0], d[1], d[2]], -1.0, 1.0);
        let w = random_tensor(rng, &[co, ci, k[0], k[1], k[2]], -0.5, 0.5);
        let b = random_tensor(rng, &[co], -0.5, 0.5);
        let label = format!("conv3d#{i} x{:?} k{k:?} s{s:?} p{p:?}", x.shape());
        let e = if i % 2 == 0 {
            layer_error(rng, Mode::Train, vec![x, w, b], &move |g, v| g.conv3d(v[0], v[1], Some(v[2]), s, p).unwrap())
        } else {
            layer_error(rng, Mode::Train, vec![x, w], &move |g, v| g.conv3d(v[0], v[1], None, s, p).unwrap())
        };
        out.push((label, e));
    }
    for i in 0..3 {
        let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
        let s: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
        let shape = [rng.random_range(1..3), rng.random_range(1..3), k[0] + rng.random_range(0..3), k[1] + 1, k[2] + 2];
        let x = random_tensor(rng, &shape, -1.0, 1.0);
        out.push((format!("avgpool3d#{i}"), layer_error(rng, Mode::Train, vec![x.clone()], &move |g, v| g.avgpool3d(v[0], k, s).unwrap())));
        out.push((format!("global_avg_pool#{i}"), layer_error(rng, Mode::Train, vec![x], &|g, v| g.global_avg_pool(v[0]).unwrap())));
    }
    for i in 0..4 {
        let c = rng.random_range(1..4);
        let shape: Vec<usize> = if i % 2 == 0 { vec![rng.random_range(2..6), c] } else { vec![2, c, 2, rng.random_range(1..4), 3] };
        let mut store = ParamStore::<f64>::new();
        let stats = store.add_stats("bn", c);
        let mode = if i < 2 { Mode::Train } else { Mode::Eval };
        {
            let st = &mut store.all_stats_mut()[0];
            st.mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            st.var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            st.initialized = true;
        }
        let x = random_tensor(rng, &shape, -2.0, 2.0);
        let gamma = random_tensor(rng, &[c], 0.5, 1.5);
        let beta = random_tensor(rng, &[c], -0.5, 0.5);
        let e = layer_error(rng, mode, vec![x, gamma, beta], &move |g, v| g.batchnorm(v[0], v[1], v[2], &store, stats).unwrap());
        out.push((format!("batchnorm#{i} {mode:?} {shape:?}"), e));
    }
    for i in 0..2 {
        let shape = [rng.random_range(1..5), rng.random_range(2..8)];
        let x = away_from_zero(rng, &shape);
        out.push((format!("relu#{i}"), layer_error(rng, Mode::Train, vec![x], &|g, v| g.relu(v[0]))));
        let x = random_tensor(rng, &shape, -4.0, 4.0);
        out.push((format!("sigmoid#{i}"), layer_error(rng, Mode::Train, vec![x.clone()], &|g, v| g.sigmoid(v[0]))));
        out.push((format!("softmax#{i}"), layer_error(rng, Mode::Train, vec![x], &|g, v| g.softmax(v[0]).unwrap())));
        let (n, fin, fout) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..5));
        let x = random_tensor(rng, &[n, fin], -1.0, 1.0);
        let w = random_tensor(rng, &[fout, fin], -1.0, 1.0);
        let b = random_tensor(rng, &[fout], -1.0, 1.0);
        out.push((format!("linear#{i}"), layer_error(rng, Mode::Train, vec![x, w, b], &|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap())));
    }
    {
        let a = random_tensor(rng, &[2, 3, 4], -1.0, 1.0);
        let b = random_tensor(rng, &[2, 3, 4], -1.0, 1.0);
        let f = rng.random_range(-2.0..2.0);
        out.push(("add".into(), layer_error(rng, Mode::Train, vec![a.clone(), b.clone()], &|g, v| g.add(v[0], v[1]).unwrap())));
        out.push(("add_scaled".into(), layer_error(rng, Mode::Train, vec![a.clone(), b.clone()], &move |g, v| g.add_scaled(v[0], v[1], f).unwrap())));
        out.push(("mul".into(), layer_error(rng, Mode::Train, vec![a.clone(), b], &|g, v| g.mul(v[0], v[1]).unwrap())));
        out.push(("scale".into(), layer_error(rng, Mode::Train, vec![a.clone()], &move |g, v| g.scale(v[0], f))));
        out.push(("reshape".into(), layer_error(rng, Mode::Train, vec![a.clone()], &|g, v| g.reshape(v[0], &[4, 6]).unwrap())));
        out.push(("sum".into(), layer_error(rng, Mode::Train, vec![a], &|g, v| g.sum(v[0]))));
    }
    for i in 0..2 {
        let (rows, cols) = (rng.random_range(1..3), rng.random_range(1..4));
        let n = rng.random_range(1..3);
        let x = random_tensor(rng, &[n, 2, 2, 2 * rows, 2 * cols], -1.0, 1.0);
        let picks: Vec<usize> = (0..n + 1).map(|_| rng.random_range(0..n * rows * cols)).collect();
        out.push((format!("patchify#{i}"), layer_error(rng, Mode::Train, vec![x.clone()], &move |g, v| g.patchify(v[0], (rows, cols)).unwrap())));
        out.push((
            format!("gather_rows#{i}"),
            layer_error(rng, Mode::Train, vec![x], &move |g, v| {
                let p = g.patchify(v[0], (rows, cols)).unwrap();
                g.gather_rows(p, &picks).unwrap()
            }),
        ));
    }
    for i in 0..2 {
        let (n, k) = (rng.random_range(1..5), rng.random_range(2..6));
        let logits = random_tensor(rng, &[n, k], -2.0, 2.0);
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        out.push((format!("cross_entropy#{i}"), layer_error(rng, Mode::Train, vec![logits], &move |g, v| g.cross_entropy(v[0], &targets).unwrap())));
        let z = random_tensor(rng, &[n, k], -3.0, 3.0);
        let labels: Vec<f64> = (0..n * k).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
        let l2 = labels.clone();
        out.push((format!("bce_with_logits#{i}"), layer_error(rng, Mode::Train, vec![z], &move |g, v| g.bce_with_logits(v[0], &l2).unwrap())));
        let s = random_tensor(rng, &[n, k], 0.05, 0.95);
        out.push((format!("binary_cross_entropy#{i}"), layer_error(rng, Mode::Train, vec![s], &move |g, v| g.binary_cross_entropy(v[0], &labels).unwrap())));
    }
    out
}

fn random_clip(rng: &mut StdRng, dims: [usize; 4], n: usize) -> Tensor<f64> {
    let [t, c, h, w] = dims;
    random_tensor(rng, &[n, c, t, h, w], -1.0, 1.0)
}

fn random_labels(rng: &mut StdRng, config: &NetworkConfig, n: usize) -> (Vec<usize>, Vec<PatchLabels>) {
    let (rows, cols) = config.grid();
    let y = (0..n).map(|_| rng.random_range(0..config.num_classes)).collect();
    let p = (0..n)
        .map(|_| PatchLabels { rows, cols, labels: (0..rows * cols).map(|_| rng.random_range(0..2u8)).collect() })
        .collect();
    (y, p)
}

fn set_params(net: &mut GestureNet<f64>, x: &[f64]) {
    let mut off = 0;
    for p in net.store_mut().params_mut() {
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(&x[off..off + n]);
        off += n;
    }
}

/// Joint-loss gradient of every parameter of a tiny network, with the
/// discrete patch choice held fixed while differencing. Returns `None` when
/// the draw sits on a ReLU kink: there the differences at `h` and `h/10`
/// disagree and no finite-difference check is meaningful.
fn full_loss_error(pipeline: Pipeline, seed: u64) -> Option<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let config = NetworkConfig { seed, ..NetworkConfig::tiny() };
    let mut net = GestureNet::<f64>::new(config.clone(), pipeline).unwrap();
    let n = rng.random_range(1..4);
    let x = random_clip(&mut rng, config.input_dims, n);
    let (y, yp) = random_labels(&mut rng, &config, n);
    let mut g = Graph::new(Mode::Train);
    let xv = g.input(x.clone());
    let fwd = net.forward(&mut g, xv).unwrap();
    let chosen: Vec<usize> = fwd.scores.iter().map(|s| s.selected_flat()).collect();
    let selection = if chosen.is_empty() { Selection::Argmax } else { Selection::Fixed(&chosen) };
    let (loss, _) = compute_loss(&mut g, &fwd, &y, &yp, config.lambda).unwrap();
    net.store_mut().zero_grad();
    g.backward_into(loss, net.store_mut()).unwrap();
    let analytic: Vec<f64> = net.store().params().iter().flat_map(|p| p.grad.as_ref().unwrap().to_f64_vec()).collect();
    let theta: Vec<f64> = net.store().params().iter().flat_map(|p| p.value.to_f64_vec()).collect();
    let mut probe = net.clone();
    let mut loss_at = |p: &[f64]| {
        set_params(&mut probe, p);
        let mut g = Graph::new(Mode::Train);
        let xv = g.input(x.clone());
        let fwd = probe.forward_with(&mut g, xv, selection).unwrap();
        let (loss, _) = compute_loss(&mut g, &fwd, &y, &yp, config.lambda).unwrap();
        g.value(loss).data()[0]
    };
    let numeric = central_difference(&mut loss_at, &theta, FD_STEP);
    let fine = central_difference(&mut loss_at, &theta, FD_STEP / 10.0);
    if max_relative_error(&fine, &numeric, FD_FLOOR).0 >= FD_TOL {
        return None;
    }
    Some(max_relative_error(&analytic, &numeric, FD_FLOOR).0)
}

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut checks = layer_checks(&mut rng);
    let mut kinks = 0;
    for pipeline in [Pipeline::Dynamic, Pipeline::Static] {
        let mut accepted = 0;
        for seed in 0..FULL_LOSS_ATTEMPTS {
            match full_loss_error(pipeline, seed) {
                Some(e) => {
                    checks.push((format!("joint loss {pipeline} seed {seed}"), e));
                    accepted += 1;
                }
                None => kinks += 1,
            }
            if accepted == FULL_LOSS_DRAWS {
                break;
            }
        }
        if accepted < FULL_LOSS_DRAWS {
            checks.push((format!("joint loss {pipeline}: only {accepted} smooth draws"), f64::INFINITY));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (worst, err) = checks.iter().fold(("", 0.0), |acc, (n, e)| if *e > acc.1 || e.is_nan() { (n, *e) } else { acc });
    let failing: Vec<&str> = checks.iter().filter(|(_, e)| !(*e < FD_TOL)).map(|(n, _)| n.as_str()).collect();
    ensure(
        failing.is_empty() && secs < GRAD_BUDGET_S,
        format!(
            "{} checks ({FULL_LOSS_DRAWS} joint-loss draws per pipeline, {kinks} kink-straddling draws redrawn), max rel err {err:.2e} ({worst}) vs < {FD_TOL:e}; {secs:.1} s vs < {GRAD_BUDGET_S} s{}",
            checks.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {failing:?}") }
        ),
    )
}

// ---------------------------------------------------------------- FLOPs

/// Counts one multiply per kernel tap and output cell, padding taps included.
fn naive_conv_count(xs: [usize; 5], ws: [usize; 5], s: [usize; 3], p: [usize; 3]) -> u64 {
    let [n, ci, t, h, w] = xs;
    let [co, _, kt, kh, kw] = ws;
    let mut count = 0;
    for _ in 0..n * co {
        for _ in (0..=t + 2 * p[0] - kt).step_by(s[0]) {
            for _ in (0..=h + 2 * p[1] - kh).step_by(s[1]) {
                for _ in (0..=w + 2 * p[2] - kw).step_by(s[2]) {
                    for _ in 0..ci * kt * kh * kw {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

fn naive_pool_count(xs: [usize; 5], k: [usize; 3], s: [usize; 3]) -> u64 {
    let [n, c, t, h, w] = xs;
    let mut count = 0;
    for _ in 0..n * c {
        for _ in (0..=t - k[0]).step_by(s[0]) {
            for _ in (0..=h - k[1]).step_by(s[1]) {
                for _ in (0..=w - k[2]).step_by(s[2]) {
                    for _ in 0..k[0] * k[1] * k[2] {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// One multiply per element (normalization scale, or the pooled mean).
fn naive_elementwise_count(shape: &[usize]) -> u64 {
    let mut count = 0;
    for _ in 0..shape.iter().product::<usize>() {
        count += 1;
    }
    count
}

fn flop_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xf10);
    let mut mismatches = Vec::new();
    for case in 0..FLOP_CASES {
        let mut g = Graph::<f64>::new(Mode::Train);
        let (kind, expected) = match case % 5 {
            0 => {
                let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..5));
                let s: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
                let p: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..k[a]));
                let d: [usize; 3] = std::array::from_fn(|a| (k[a] + rng.random_range(0..9)).saturating_sub(2 * p[a]).max(1));
                let xs = [rng.random_range(1..4), rng.random_range(1..5), d[0], d[1], d[2]];
                let ws = [rng.random_range(1..6), xs[1], k[0], k[1], k[2]];
                let x = g.input(Tensor::zeros(&xs));
                let w = g.input(Tensor::zeros(&ws));
                g.conv3d(x, w, None, s, p).unwrap();
                ("conv3d", naive_conv_count(xs, ws, s, p))
            }
            1 => {
                let k: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
                let s: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..4));
                let xs = [rng.random_range(1..3), rng.random_range(1..4), k[0] + rng.random_range(0..6), k[1] + rng.random_range(0..6), k[2] + rng.random_range(0..6)];
                let x = g.input(Tensor::zeros(&xs));
                g.avgpool3d(x, k, s).unwrap();
                ("avgpool3d", naive_pool_count(xs, k, s))
            }
            2 => {
                let (n, fin, fout) = (rng.random_range(1..9), rng.random_range(1..33), rng.random_range(1..17));
                let x = g.input(Tensor::zeros(&[n, fin]));
                let w = g.input(Tensor::zeros(&[fout, fin]));
                g.linear(x, w, None).unwrap();
                let mut count = 0;
                for _ in 0..n * fout {
                    for _ in 0..fin {
                        count += 1;
                    }
                }
                ("linear", count)
            }
            3 => {
                let shape = vec![rng.random_range(2..4), rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6)];
                let mut store = ParamStore::<f64>::new();
                let stats = store.add_stats("bn", shape[1]);
                let x = g.input(Tensor::zeros(&shape));
                let gamma = g.input(Tensor::ones(&[shape[1]]));
                let beta = g.input(Tensor::zeros(&[shape[1]]));
                g.batchnorm(x, gamma, beta, &store, stats).unwrap();
                ("batchnorm", naive_elementwise_count(&shape))
            }
            _ => {
                let shape: Vec<usize> = (0..5).map(|_| rng.random_range(1..6)).collect();
                let x = g.input(Tensor::zeros(&shape));
                g.global_avg_pool(x).unwrap();
                ("global_avg_pool", naive_elementwise_count(&shape))
            }
        };
        let got = g.flops().total_macs();
        if got != expected || g.flops().total_for(kind) != expected {
            mismatches.push(format!("case {case} {kind}: counted {got}, naive {expected}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        mismatches.is_empty() && secs < FLOP_BUDGET_S,
        format!("{FLOP_CASES} layer shapes, {} mismatches; {secs:.2} s vs < {FLOP_BUDGET_S} s {mismatches:?}", mismatches.len()),
    )
}

// ---------------------------------------------------------------- loss arithmetic

fn hand_example() -> Verdict {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let mut g = Graph::<f64>::new(Mode::Train);
    let logits = g.leaf(Tensor::zeros(&[1, 4]));
    let sel = g.leaf(Tensor::from_f64(&[1, 2], &[logit(0.9), logit(0.2)]).unwrap());
    let fwd = Forward {
        logits,
        selector_logits: Some(sel),
        scores: vec![PatchScores::from_scores(2, 1, vec![0.9, 0.2])],
        flops: FlopReport::default(),
    };
    let labels = PatchLabels { rows: 2, cols: 1, labels: vec![1, 0] };
    let b = compute_loss(&mut g, &fwd, &[0], &[labels], 2.0).map_err(|e| e.to_string())?.1;
    // uniform 4-way softmax: ln 4; selection: -ln 0.9 - ln(1 - 0.2)
    let oracle = 4f64.ln() + 2.0 * (-(0.9f64.ln()) - 0.8f64.ln());
    ensure(
        (b.total - HAND_VALUE).abs() < HAND_TOL && (oracle - HAND_VALUE).abs() < HAND_TOL,
        format!("loss {:.6}, independent {oracle:.6}, target {HAND_VALUE} ± {HAND_TOL:e}", b.total),
    )
}

// ---------------------------------------------------------------- routing

fn block_grads(net: &mut GestureNet<f64>, x: &Tensor<f64>, build: &dyn Fn(&mut Graph<f64>, &Forward) -> Var) -> [Vec<f64>; 3] {
    let mut g = Graph::new(Mode::Train);
    let xv = g.input(x.clone());
    let fwd = net.forward(&mut g, xv).unwrap();
    let loss = build(&mut g, &fwd);
    net.store_mut().zero_grad();
    g.backward_into(loss, net.store_mut()).unwrap();
    ["extractor", "selector", "classifier"].map(|b| {
        net.block_params(b)
            .iter()
            .flat_map(|n| net.store().by_name(n).unwrap().grad.as_ref().unwrap().to_f64_vec())
            .collect()
    })
}

fn gradient_routing() -> Verdict {
    let exactly_zero = |v: &[f64]| !v.is_empty() && v.iter().all(|g| g.to_bits() == 0);
    let nonzero = |v: &[f64]| v.iter().any(|&g| g != 0.0);
    let mut bad = Vec::new();
    let seeds = 0..5u64;
    for seed in seeds.clone() {
        let mut rng = StdRng::seed_from_u64(100 + seed);
        let config = NetworkConfig { seed, ..NetworkConfig::tiny() };
        let mut net = GestureNet::<f64>::new(config.clone(), Pipeline::Dynamic).unwrap();
        let x = random_clip(&mut rng, config.input_dims, 3);
        let (y, yp) = random_labels(&mut rng, &config, 3);
        let [theta, psi, phi] = block_grads(&mut net, &x, &|g, f| compute_loss(g, f, &y, &yp, 0.0).unwrap().0);
        if !exactly_zero(&psi) {
            bad.push(format!("seed {seed}: selector gradient with lambda 0"));
        }
        if !nonzero(&theta) || !nonzero(&phi) {
            bad.push(format!("seed {seed}: extractor/classifier gradient vanished with lambda 0"));
        }
        let [theta, psi, phi] = block_grads(&mut net, &x, &|g, f| selection_loss(g, f.selector_logits.unwrap(), &yp).unwrap());
        if !exactly_zero(&phi) {
            bad.push(format!("seed {seed}: classifier gradient without the classification term"));
        }
        if !nonzero(&theta) || !nonzero(&psi) {
            bad.push(format!("seed {seed}: extractor/selector gradient vanished without the classification term"));
        }
    }
    ensure(bad.is_empty(), format!("{} seeds, both ablations; violations: {bad:?}", seeds.count()))
}

// ---------------------------------------------------------------- grid ordering

fn grid_ordering() -> Verdict {
    let start = Instant::now();
    let mut totals = Vec::new();
    for grid in [[1, 2], [2, 2], [2, 3]] {
        let r = flop_report(&NetworkConfig { grid, ..NetworkConfig::desk() }).map_err(|e| e.to_string())?;
        totals.push((grid, r.dynamic.total()));
    }
    let secs = start.elapsed().as_secs_f64();
    let decreasing = totals.windows(2).all(|w| w[0].1 > w[1].1);
    let text: Vec<String> = totals.iter().map(|(g, m)| format!("{}x{} {:.4} GFLOPS", g[0], g[1], 2.0 * *m as f64 / 1e9)).collect();
    ensure(decreasing && secs < GRID_BUDGET_S, format!("{}; {secs:.2} s vs < {GRID_BUDGET_S} s", text.join(" > ")))
}

// ---------------------------------------------------------------- streaming

/// A desk-configuration model with running statistics committed from one
/// random batch, ready for eval-mode inference.
fn eval_ready_desk(pipeline: Pipeline, seed: u64) -> GestureNet<f32> {
    let config = NetworkConfig { seed, ..NetworkConfig::desk() };
    let mut net = GestureNet::<f32>::new(config, pipeline).unwrap();
    let [t, c, h, w] = net.config().input_dims;
    let mut rng = StdRng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[2, c, t, h, w], 0.0, 1.0).cast();
    let mut g = Graph::new(Mode::Train);
    let xv = g.input(x);
    net.forward(&mut g, xv).unwrap();
    net.store_mut().commit_stats(g.stat_updates());
    net
}

fn stream_equivalence() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0x57);
    let nets = [eval_ready_desk(Pipeline::Dynamic, 7), eval_ready_desk(Pipeline::Static, 8)];
    let mut windows = 0;
    let mut bad = Vec::new();
    for k in 0..STREAMS {
        let net = &nets[usize::from(k % 4 == 3)];
        let [t, c, h, w] = net.config().input_dims;
        let len = rng.random_range(t..3 * t + 1);
        let stride = rng.random_range(1..t + 1);
        let stream: Tensor<f32> = random_tensor(&mut rng, &[c, len, h, w], 0.0, 1.0).cast();
        let preds = infer_stream(net, &stream, stride, rng.random_range(1..6)).map_err(|e| e.to_string())?;
        let clips: Vec<Tensor<f32>> = preds.iter().map(|p| window_of(&stream, p.start, t).unwrap()).collect();
        let (batch, _) = net.predict(&Tensor::stack(&clips).unwrap()).map_err(|e| e.to_string())?;
        let expected_windows = (len - t) / stride + 1;
        let same = preds.len() == expected_windows
            && preds.iter().zip(&batch).enumerate().all(|(i, (p, b))| {
                p.start == i * stride
                    && p.class == b.class
                    && p.selected == b.selected()
                    && p.probabilities.len() == b.probabilities.len()
                    && p.probabilities.iter().zip(&b.probabilities).all(|(x, y)| x.to_bits() == y.to_bits())
            });
        if !same {
            bad.push(format!("stream {k} (len {len}, stride {stride})"));
        }
        windows += preds.len();
    }
    ensure(bad.is_empty(), format!("{STREAMS} streams, {windows} windows bit-identical to one batched pass; mismatches {bad:?}"))
}

// ---------------------------------------------------------------- reproducibility

fn reproducibility(root: &Path) -> Verdict {
    let data = root.join("repro-data");
    let dims = NetworkConfig::desk().input_dims;
    if !data.join("manifest.json").is_file() {
        generate_dataset(&data, dims, &DataConfig { num_clips: 40, seed: 11, ..DataConfig::default() }, true)
            .map_err(|e| e.to_string())?;
    }
    let ds = Dataset::open(&data).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 4, seed: 5, checkpoint_every: 2, eval_every: 2, ..TrainConfig::default() };
    let model = || GestureNet::<f32>::new(NetworkConfig { seed: 5, ..NetworkConfig::desk() }, Pipeline::Dynamic).unwrap();
    let read = |dir: &Path| -> Result<(Vec<u8>, Vec<u8>), String> {
        let r = |f: &str| std::fs::read(dir.join(f)).map_err(|e| format!("{}: {e}", dir.join(f).display()));
        Ok((r(CHECKPOINT_FILE)?, r(METRICS_FILE)?))
    };
    let run = |name: &str, stop_after: Option<usize>, resume: bool| -> Result<(Vec<u8>, Vec<u8>), String> {
        let out = root.join(name);
        let opts = TrainOptions {
            out_dir: Some(out.clone()),
            resume: resume.then(|| out.join(CHECKPOINT_FILE)),
            stop_after,
            verbose: false,
        };
        train(model(), &ds, &cfg, &opts).map_err(|e| e.to_string())?;
        read(&out)
    };
    for d in ["repro-a", "repro-b", "repro-split"] {
        let _ = std::fs::remove_dir_all(root.join(d));
    }
    let a = run("repro-a", None, false)?;
    let b = run("repro-b", None, false)?;
    let half = run("repro-split", Some(2), false)?;
    let resumed = run("repro-split", None, true)?;
    ensure(
        a == b && resumed == a && half != a,
        format!(
            "desk network, {} train clips, {} epochs: identical runs {}, stop at 2 + resume {} (checkpoint {} bytes)",
            ds.records(Split::Train).len(),
            cfg.epochs,
            if a == b { "bitwise equal" } else { "DIFFER" },
            if resumed == a { "bitwise equal" } else { "DIFFERS" },
            a.0.len()
        ),
    )
}

// ---------------------------------------------------------------- desk benchmark

struct RunResult {
    seed: u64,
    pipeline: Pipeline,
    top1: f64,
    selection: Option<f64>,
    deterioration: Option<f64>,
    macs_per_window: f64,
    secs: f64,
}

fn desk_dataset(root: &Path) -> Result<Dataset, String> {
    let data = root.join("desk-data");
    let cfg = DataConfig { num_clips: DESK_CLIPS, seed: 0, ..DataConfig::default() };
    if !data.join("manifest.json").is_file() {
        generate_dataset(&data, NetworkConfig::desk().input_dims, &cfg, true).map_err(|e| e.to_string())?;
    }
    Dataset::open(&data).map_err(|e| e.to_string())
}

fn train_and_evaluate(ds: &Dataset, root: &Path, seed: u64, pipeline: Pipeline) -> Result<RunResult, String> {
    let start = Instant::now();
    let network = NetworkConfig { seed, ..NetworkConfig::desk() };
    let recipe = TrainConfig { seed, eval_every: 30, checkpoint_every: 30, ..TrainConfig::default() };
    let out = root.join(format!("desk-{pipeline}-seed{seed}"));
    let model = GestureNet::<f32>::new(network, pipeline).map_err(|e| e.to_string())?;
    let opts = TrainOptions { out_dir: Some(out), ..TrainOptions::default() };
    let trained = train(model, ds, &recipe, &opts).map_err(|e| e.to_string())?.model;
    let results = predict_split(&trained, ds, Split::Test, recipe.batch_size).map_err(|e| e.to_string())?;
    let report = EvalReport::from_results(&results, trained.config().num_classes, None).map_err(|e| e.to_string())?;
    let macs = results.iter().map(|r| r.macs as f64).sum::<f64>() / results.len() as f64;
    let r = RunResult {
        seed,
        pipeline,
        top1: report.top1,
        selection: report.selection_accuracy,
        deterioration: report.relative_deterioration,
        macs_per_window: macs,
        secs: start.elapsed().as_secs_f64(),
    };
    eprintln!(
        "    seed {seed} {pipeline:>7}: top-1 {:.4}, selection {}, deterioration {}, {:.2}M MACs/window, {:.0} s",
        r.top1,
        r.selection.map_or("-".into(), |s| format!("{s:.4}")),
        r.deterioration.map_or("-".into(), |d| format!("{d:.2}%")),
        r.macs_per_window / 1e6,
        r.secs
    );
    Ok(r)
}

fn desk_benchmark(runs: &[(RunResult, RunResult)], secs: f64) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut wins = 0;
    for (d, s) in runs {
        let sel = d.selection.unwrap_or(f64::NAN);
        let ratio = d.macs_per_window / s.macs_per_window;
        ok &= d.top1 >= MIN_TOP1 && sel >= MIN_SELECTION && ratio <= MAX_MAC_RATIO;
        wins += usize::from(d.top1 >= s.top1);
        notes.push(format!(
            "seed {}: dyn {:.4} / static {:.4}, sel {sel:.4}, MACs {ratio:.3}x",
            d.seed, d.top1, s.top1
        ));
    }
    ok &= wins >= MIN_WINS && runs.len() == DESK_SEEDS.len() && secs <= DESK_BUDGET_S;
    ensure(
        ok,
        format!(
            "{}; dyn >= static in {wins}/{} (need {MIN_WINS}); thresholds top-1 >= {MIN_TOP1}, sel >= {MIN_SELECTION}, MACs <= {MAX_MAC_RATIO}x; {:.1} min vs <= {:.0} min",
            notes.join("; "),
            runs.len(),
            secs / 60.0,
            DESK_BUDGET_S / 60.0
        ),
    )
}

fn deterioration(runs: &[(RunResult, RunResult)]) -> Verdict {
    let mut wins = 0;
    let mut notes = Vec::new();
    for (d, s) in runs {
        let (Some(dd), Some(sd)) = (d.deterioration, s.deterioration) else {
            notes.push(format!("seed {}: missing near/far bin", d.seed));
            continue;
        };
        wins += usize::from(dd <= sd);
        notes.push(format!("seed {}: dyn {dd:.2}% vs static {sd:.2}%", d.seed));
        debug_assert_eq!((d.pipeline, s.pipeline), (Pipeline::Dynamic, Pipeline::Static));
    }
    ensure(wins >= MIN_WINS, format!("{}; dyn <= static in {wins}/{} (need {MIN_WINS})", notes.join("; "), runs.len()))
}

// ---------------------------------------------------------------- driver

struct Report {
    selected: Option<Vec<u32>>,
    failures: usize,
    ran: usize,
}

impl Report {
    fn wants(&self, id: u32) -> bool {
        self.selected.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> Verdict) {
        if !self.wants(id) {
            println!("SKIP [{id:>2}] {name}");
            return;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        self.record(id, name, verdict, start.elapsed().as_secs_f64());
    }

    fn record(&mut self, id: u32, name: &str, verdict: Verdict, secs: f64) {
        self.ran += 1;
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id:>2}] {name}: {detail} [{secs:.1} s]");
    }
}

fn main() {
    let selected = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect::<Vec<u32>>());
    let mut report = Report { selected, failures: 0, ran: 0 };
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = std::env::var_os("ACCEPTANCE_OUT").map_or_else(|| tmp.path().to_path_buf(), Into::into);
    std::fs::create_dir_all(&root).expect("acceptance output directory");

    report.run(1, "gradient oracle", gradient_oracle);
    report.run(2, "FLOP oracle", flop_oracle);
    report.run(3, "joint loss hand example", hand_example);
    report.run(4, "gradient routing", gradient_routing);
    report.run(5, "patch grid ordering", grid_ordering);
    report.run(8, "stream/batch equivalence", stream_equivalence);
    report.run(9, "reproducibility", || reproducibility(&root));

    if [6, 7, 10].iter().any(|&id| report.wants(id)) {
        let start = Instant::now();
        match desk_dataset(&root) {
            Err(e) => {
                for (id, name) in [(10, "dataset sanity"), (6, "desk benchmark"), (7, "distance deterioration")] {
                    if report.wants(id) {
                        report.record(id, name, Err(format!("dataset generation failed: {e}")), 0.0);
                    }
                }
            }
            Ok(ds) => {
                let gen_secs = start.elapsed().as_secs_f64();
                report.run(10, "dataset sanity", || {
                    let acc = nearest_centroid_accuracy(&ds).map_err(|e| e.to_string())?;
                    ensure(acc > MIN_CENTROID_ACC, format!("nearest-centroid top-1 {acc:.4} vs > {MIN_CENTROID_ACC} ({} test clips)", ds.records(Split::Test).len()))
                });
                if report.wants(6) || report.wants(7) {
                    let bench_start = Instant::now();
                    let runs: Result<Vec<(RunResult, RunResult)>, String> = DESK_SEEDS
                        .iter()
                        .map(|&seed| {
                            Ok((
                                train_and_evaluate(&ds, &root, seed, Pipeline::Dynamic)?,
                                train_and_evaluate(&ds, &root, seed, Pipeline::Static)?,
                            ))
                        })
                        .collect();
                    // dataset generation counts towards the budget; the sanity oracle does not
                    let secs = gen_secs + bench_start.elapsed().as_secs_f64();
                    match runs {
                        Ok(runs) => {
                            report.run(6, "desk benchmark", || desk_benchmark(&runs, secs));
                            report.run(7, "distance deterioration", || deterioration(&runs));
                        }
                        Err(e) => {
                            report.record(6, "desk benchmark", Err(e.clone()), secs);
                            report.record(7, "distance deterioration", Err(e), secs);
                        }
                    }
                }
            }
        }
    }

    println!("acceptance: {}/{} criteria passed", report.ran - report.failures, report.ran);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
