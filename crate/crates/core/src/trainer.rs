//! Joint end-to-end training: SGD with momentum, per-epoch cosine learning
//! rate, seeded shuffling, periodic checkpoints and a metrics CSV.

use std::path::{Path, PathBuf};

use dyngest_tensor::{sgd_momentum_step, Element, Graph, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, TrainConfig};
use crate::error::{config_err, io_err, Error, Result};
use crate::evaluator;
use crate::net::checkpoint::{load_checkpoint, save_checkpoint, TrainState};
use crate::net::{argmax_first, compute_loss, derive_patch_labels, GestureNet, LossBreakdown, PatchLabels};
use crate::synthdata::{union_bbox, Dataset, Sample, Split};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.dgck";

/// `lr0 · ½ · (1 + cos(π·e/E))`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> Result<f64> {
    if epoch > total {
        return Err(config_err(format!("epoch {epoch} is past the end of a {total}-epoch schedule")));
    }
    if total == 0 {
        return Err(config_err("a cosine schedule needs at least one epoch"));
    }
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos()))
}

/// A stacked training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, C, T, H, W]`
    pub clips: Tensor<f32>,
    pub labels: Vec<usize>,
    pub patch_labels: Vec<PatchLabels>,
}

impl Batch {
    /// Patch labels come from the union of the per-frame boxes over the window.
    pub fn from_samples(samples: &[Sample], config: &NetworkConfig) -> Result<Batch> {
        if samples.is_empty() {
            return Err(config_err("a batch needs at least one sample"));
        }
        let clips: Vec<Tensor<f32>> = samples.iter().map(|s| s.clip.clone()).collect();
        Ok(Batch {
            clips: Tensor::stack(&clips)?,
            labels: samples.iter().map(|s| s.gesture_class).collect(),
            patch_labels: samples.iter().map(|s| derive_patch_labels(union_bbox(&s.bboxes), config)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub loss: LossBreakdown,
    /// Samples whose (pre-update) prediction matched the label.
    pub correct: usize,
    /// Samples whose selected patch was labelled positive; 0 for the static pipeline.
    pub selection_hits: usize,
}

fn batch_input<T: Element>(batch: &Batch) -> Tensor<T> {
    batch.clips.cast()
}

/// Forward, joint loss, backward and one SGD-momentum update.
pub fn train_step<T: Element>(model: &mut GestureNet<T>, batch: &Batch, lr: f64, momentum: f64) -> Result<StepResult> {
    let lambda = model.config().lambda;
    let mut g = Graph::new(Mode::Train);
    let x = g.input(batch_input(batch));
    let fwd = model.forward(&mut g, x)?;
    let (loss, breakdown) = compute_loss(&mut g, &fwd, &batch.labels, &batch.patch_labels, lambda)?;
    let k = model.config().num_classes;
    let logits = g.value(fwd.logits).to_f64_vec();
    let correct = logits.chunks(k).zip(&batch.labels).filter(|(row, &y)| argmax_first(row) == y).count();
    let selection_hits = fwd
        .scores
        .iter()
        .zip(&batch.patch_labels)
        .filter(|(s, l)| l.labels[s.selected_flat()] == 1)
        .count();
    let store = model.store_mut();
    store.zero_grad();
    g.backward_into(loss, store)?;
    store.commit_stats(g.stat_updates());
    sgd_momentum_step(store, lr, momentum)?;
    Ok(StepResult { loss: breakdown, correct, selection_hits })
}

/// The training loss of a batch under batch statistics, without touching
/// parameters or running statistics.
pub fn batch_loss<T: Element>(model: &GestureNet<T>, batch: &Batch) -> Result<LossBreakdown> {
    let mut g = Graph::new(Mode::Train);
    let x = g.input(batch_input(batch));
    let fwd = model.forward(&mut g, x)?;
    Ok(compute_loss(&mut g, &fwd, &batch.labels, &batch.patch_labels, model.config().lambda)?.1)
}

/// One row of the metrics log. `epoch` is the zero-based index of the
/// completed epoch, trained at `lr = cosine_lr(epoch, E, lr0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_sel: f64,
    pub train_top1: f64,
    /// Present on evaluation epochs.
    pub test_top1: Option<f64>,
    /// Test-split selection accuracy on evaluation epochs (dynamic pipeline).
    pub sel_acc: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for `metrics.csv` and `checkpoint.dgck`; nothing is written without it.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) after this many completed epochs.
    pub stop_after: Option<usize>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

pub struct TrainOutcome {
    pub model: GestureNet<f32>,
    pub state: TrainState,
    pub metrics: Vec<EpochMetrics>,
}

fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(format!("writing {}", path.display())))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Trains `model` on the train split of `dataset`. With `options.resume`,
/// the model, optimizer state, epoch counter and shuffling PRNG are restored
/// from the checkpoint and the run continues bit-for-bit where it stopped.
pub fn train(model: GestureNet<f32>, dataset: &Dataset, cfg: &TrainConfig, options: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = dataset.manifest();
    if manifest.input_dims != model.config().input_dims {
        return Err(Error::Data(format!(
            "dataset clips are {:?} (T, C, H, W) but the network expects {:?}",
            manifest.input_dims,
            model.config().input_dims
        )));
    }
    if manifest.num_classes > model.config().num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes but the network only {}",
            manifest.num_classes,
            model.config().num_classes
        )));
    }
    let train_records = dataset.records(Split::Train);
    if train_records.is_empty() {
        return Err(Error::Data("dataset has no training clips".into()));
    }
    dataset.check_files()?;

    let (mut model, mut state, mut metrics) = match &options.resume {
        Some(path) => {
            let (m, st) = load_checkpoint::<f32>(path, Some((model.config(), model.pipeline())))?;
            if let Some(saved) = &st.train {
                let mut diffs = Vec::new();
                let (a, b) = (serde_json::to_value(saved).unwrap(), serde_json::to_value(cfg).unwrap());
                for (k, v) in a.as_object().unwrap() {
                    if b.get(k) != Some(v) {
                        diffs.push(format!("train.{k}"));
                    }
                }
                if !diffs.is_empty() {
                    return Err(Error::ConfigMismatch(diffs));
                }
            }
            let metrics = match &options.out_dir {
                Some(dir) if dir.join(METRICS_FILE).is_file() => {
                    let mut rows = read_metrics(&dir.join(METRICS_FILE))?;
                    rows.retain(|r| r.epoch < st.epoch);
                    rows
                }
                _ => Vec::new(),
            };
            (m, st, metrics)
        }
        None => {
            let rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
            (model, TrainState { epoch: 0, rng: Some(rng), train: Some(cfg.clone()) }, Vec::new())
        }
    };
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }

    let end = options.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    let config = model.config().clone();
    let mut order: Vec<usize> = (0..train_records.len()).collect();
    while state.epoch < end {
        let epoch = state.epoch;
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)?;
        let rng = state.rng.get_or_insert_with(|| Xoshiro256PlusPlus::seed_from_u64(cfg.seed));
        order.sort_unstable();
        order.shuffle(rng);

        let (mut total, mut cls, mut sel, mut correct, mut seen) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let samples = chunk.iter().map(|&i| dataset.load(train_records[i])).collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_samples(&samples, &config)?;
            let step = train_step(&mut model, &batch, lr, cfg.momentum)?;
            let n = batch.len() as f64;
            total += step.loss.total * n;
            cls += step.loss.classification_term * n;
            sel += step.loss.selection_term * n;
            correct += step.correct;
            seen += batch.len();
        }
        let n = seen as f64;
        state.epoch += 1;
        let evaluate = state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs;
        let (test_top1, sel_acc) = if evaluate && !dataset.records(Split::Test).is_empty() {
            let results = evaluator::predict_split(&model, dataset, Split::Test, cfg.batch_size)?;
            let report = evaluator::EvalReport::from_results(&results, config.num_classes, None)?;
            (Some(report.top1), report.selection_accuracy)
        } else {
            (None, None)
        };
        let row = EpochMetrics {
            epoch,
            lr,
            loss_total: total / n,
            loss_cls: cls / n,
            loss_sel: sel / n,
            train_top1: correct as f64 / n,
            test_top1,
            sel_acc,
        };
        if options.verbose {
            eprintln!(
                "epoch {epoch:>3} lr {lr:.3e} loss {:.4} (cls {:.4}, sel {:.4}) train {:.3} test {} sel {}",
                row.loss_total,
                row.loss_cls,
                row.loss_sel,
                row.train_top1,
                row.test_top1.map_or("-".into(), |v| format!("{v:.3}")),
                row.sel_acc.map_or("-".into(), |v| format!("{v:.3}")),
            );
        }
        metrics.push(row);
        if let Some(dir) = &options.out_dir {
            write_metrics(&dir.join(METRICS_FILE), &metrics)?;
            if state.epoch % cfg.checkpoint_every == 0 || state.epoch == end {
                save_checkpoint(&dir.join(CHECKPOINT_FILE), &model, &state)?;
            }
        }
    }
    Ok(TrainOutcome { model, state, metrics })
}
