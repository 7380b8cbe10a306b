mod common;

use dyngest::evaluator::{per_class_accuracy, predict_split, top1_accuracy, EvalReport};
use dyngest::net::{derive_patch_labels, BBox, PatchScores};
use dyngest::synthdata::{union_bbox, Split};
use dyngest::{NetworkConfig, Pipeline};
use dyngest_tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn top1_ignores_pair_order(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40), seed in any::<u64>()) {
        let (p, y): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_mul(31).wrapping_add(i * 17) % n);
        }
        let (ps, ys): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let a = top1_accuracy(&p, &y).unwrap();
        prop_assert_eq!(a, top1_accuracy(&ps, &ys).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn macro_average_equals_top1_when_balanced(k in 1usize..8, per in 1usize..10, preds in prop::collection::vec(0usize..8, 80)) {
        let labels: Vec<usize> = (0..k * per).map(|i| i % k).collect();
        let p = &preds[..labels.len()];
        let table = per_class_accuracy(p, &labels, k);
        prop_assert_eq!(table.len(), k);
        let macro_avg = table.values().sum::<f64>() / k as f64;
        prop_assert!((macro_avg - top1_accuracy(p, &labels).unwrap()).abs() < 1e-12);
        prop_assert!(table.values().all(|v| (0.0..=1.0).contains(v)));
    }
}

/// Share of bbox pixels inside the top-left patch, in pixel space.
fn top_left_positive(b: BBox, config: &NetworkConfig) -> bool {
    let [_, _, h, w] = config.input_dims;
    let (ph, pw) = ((h / config.grid[0]) as i64, (w / config.grid[1]) as i64);
    let ix = ((b.x + b.w).min(pw) - b.x.max(0)).max(0);
    let iy = ((b.y + b.h).min(ph) - b.y.max(0)).max(0);
    4 * ix * iy >= b.w * b.h
}

#[test]
fn zero_selector_picks_the_first_patch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path(), 200, 31);
    let mut net = common::eval_ready(Pipeline::Dynamic, 4);
    for name in net.block_params("selector") {
        let id = net.store().id(&name).unwrap();
        net.store_mut().get_mut(id).value.data_mut().fill(0.0);
    }
    let results = predict_split(&net, &ds, Split::Test, 16).unwrap();
    assert!(results.iter().all(|r| r.selected == Some(0)));
    let expected = ds
        .records(Split::Test)
        .iter()
        .filter(|r| top_left_positive(union_bbox(&r.bboxes), net.config()))
        .count() as f64
        / results.len() as f64;
    let report = EvalReport::from_results(&results, 10, None).unwrap();
    let got = report.selection_accuracy.unwrap();
    assert!((got - expected).abs() <= 0.05, "selection accuracy {got}, placement share {expected}");
    let per_class_total: usize = (0..10).map(|c| results.iter().filter(|r| r.label == c).count()).sum();
    assert_eq!(per_class_total, report.windows);
}

#[test]
fn label_shaped_scores_always_select_a_positive() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path(), 60, 32);
    let config = NetworkConfig::small();
    for r in &ds.manifest().clips {
        let l = derive_patch_labels(union_bbox(&r.bboxes), &config);
        let s = PatchScores::from_scores(l.rows, l.cols, l.labels.iter().map(|&v| if v == 1 { 0.9 } else { 0.1 }).collect());
        assert_eq!(l.labels[s.selected_flat()], 1, "clip {}", r.id);
    }
}

#[test]
fn straddling_gesture_counts_either_patch() {
    let config = NetworkConfig::small();
    let l = derive_patch_labels(BBox::new(26, 4, 12, 12), &config);
    assert_eq!(l.labels, vec![1, 1, 0, 0]);
    for pick in [0usize, 1] {
        let mut s = vec![0.1; 4];
        s[pick] = 0.9;
        assert_eq!(l.labels[PatchScores::from_scores(2, 2, s).selected_flat()], 1);
    }
}

#[test]
fn evaluation_is_batch_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path(), 50, 33);
    let net = common::eval_ready(Pipeline::Dynamic, 8);
    let a = predict_split(&net, &ds, Split::Test, 1).unwrap();
    let b = predict_split(&net, &ds, Split::Test, 7).unwrap();
    assert_eq!(a, b);
    let window = net.window_flops().unwrap().total();
    assert!(a.iter().all(|r| r.macs == window));
    let clip: Tensor<f32> = ds.load(ds.records(Split::Test)[0]).unwrap().clip;
    let [c, t, h, w]: [usize; 4] = clip.shape().try_into().unwrap();
    let (p, _) = net.predict(&clip.reshape(&[1, c, t, h, w]).unwrap()).unwrap();
    assert_eq!(p[0].class, a[0].predicted);
}
