//! Accuracy, per-class and per-distance breakdowns, selection accuracy and
//! static-vs-dynamic compute reports.
//!
//! Every report states its compute unit: GFLOPS = 2·MACs/1e9 per window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dyngest_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, Pipeline};
use crate::error::{config_err, io_err, Error, Result};
use crate::net::{derive_patch_labels, FlopReport, GestureNet};
use crate::parallel::{map_indexed, worker_threads};
use crate::synthdata::{union_bbox, Dataset, Distance, Split};

pub const GFLOPS_CONVENTION: &str = "GFLOPS = 2*MACs/1e9 per window";

pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(config_err(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(config_err("accuracy of an empty prediction set is undefined"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class recall. Classes without support are absent from the map.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> BTreeMap<usize, f64> {
    let mut support = vec![0usize; num_classes];
    let mut hits = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y < num_classes {
            support[y] += 1;
            hits[y] += usize::from(p == y);
        }
    }
    (0..num_classes).filter(|&c| support[c] > 0).map(|c| (c, hits[c] as f64 / support[c] as f64)).collect()
}

/// `(near − far) / near · 100`; absent when `near` is zero.
pub fn relative_deterioration(near: f64, far: f64) -> Option<f64> {
    (near > 0.0).then(|| (near - far) / near * 100.0)
}

/// Per-window MACs of both pipelines for one network config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopComparison {
    pub dynamic: FlopReport,
    #[serde(rename = "static")]
    pub static_: FlopReport,
}

impl FlopComparison {
    /// Static classifier MACs over dynamic classifier MACs.
    pub fn classifier_ratio(&self) -> f64 {
        self.static_.classifier as f64 / self.dynamic.classifier as f64
    }

    /// Dynamic total over static total.
    pub fn total_ratio(&self) -> f64 {
        self.dynamic.total() as f64 / self.static_.total() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {GFLOPS_CONVENTION}\n");
        let _ = writeln!(s, "{:<12} {:>14} {:>14}", "block", "static MACs", "dynamic MACs");
        for ((name, st), (_, dy)) in self.static_.entries().into_iter().zip(self.dynamic.entries()) {
            let _ = writeln!(s, "{name:<12} {st:>14} {dy:>14}");
        }
        let _ = writeln!(s, "{:<12} {:>14} {:>14}", "total", self.static_.total(), self.dynamic.total());
        let _ = writeln!(s, "{:<12} {:>14.4} {:>14.4}", "GFLOPS", self.static_.gflops(), self.dynamic.gflops());
        let _ = writeln!(s, "classifier ratio static/dynamic: {:.3}", self.classifier_ratio());
        let _ = writeln!(s, "total ratio dynamic/static: {:.3}", self.total_ratio());
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["block", "static_macs", "dynamic_macs"])?;
        for ((name, st), (_, dy)) in self.static_.entries().into_iter().zip(self.dynamic.entries()) {
            w.write_record([name.to_string(), st.to_string(), dy.to_string()])?;
        }
        w.write_record(["total".to_string(), self.static_.total().to_string(), self.dynamic.total().to_string()])?;
        w.flush().map_err(io_err(format!("writing {}", path.display())))
    }
}

/// Counts one window's MACs for the dynamic and the static pipeline. Depends
/// only on the config.
pub fn flop_report(config: &NetworkConfig) -> Result<FlopComparison> {
    let count = |p| GestureNet::<f32>::new(config.clone(), p)?.window_flops();
    Ok(FlopComparison { dynamic: count(Pipeline::Dynamic)?, static_: count(Pipeline::Static)? })
}

/// Eval-mode outcome for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowResult {
    pub clip_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub distance: Distance,
    /// Selected flat patch index (dynamic pipeline).
    pub selected: Option<usize>,
    /// Whether the selected patch is labelled positive.
    pub selection_hit: Option<bool>,
    /// MACs spent on this window.
    pub macs: u64,
}

/// Fraction of windows whose selected patch is labelled positive; absent
/// when no window carries a selection.
pub fn selection_accuracy(results: &[WindowResult]) -> Option<f64> {
    let hits: Vec<bool> = results.iter().filter_map(|r| r.selection_hit).collect();
    (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Evaluates every clip of `split` in eval mode. Batches may run on several
/// threads; predictions do not depend on batching.
pub fn predict_split(model: &GestureNet<f32>, dataset: &Dataset, split: Split, batch_size: usize) -> Result<Vec<WindowResult>> {
    let records = dataset.records(split);
    let batch_size = batch_size.max(1);
    let chunks: Vec<_> = records.chunks(batch_size).collect();
    let config = model.config();
    let batches = map_indexed(chunks.len(), worker_threads(), |b| -> Result<Vec<WindowResult>> {
        let samples = chunks[b].iter().map(|r| dataset.load(r)).collect::<Result<Vec<_>>>()?;
        let clips: Vec<Tensor<f32>> = samples.iter().map(|s| s.clip.clone()).collect();
        let (preds, flops) = model.predict(&Tensor::stack(&clips)?)?;
        let macs = flops.total() / samples.len() as u64;
        Ok(preds
            .into_iter()
            .zip(samples.iter().zip(chunks[b]))
            .map(|(p, (s, r))| {
                let selected = p.scores.as_ref().map(|sc| sc.selected_flat());
                let selection_hit =
                    selected.map(|k| derive_patch_labels(union_bbox(&s.bboxes), config).labels[k] == 1);
                WindowResult {
                    clip_id: r.id,
                    label: s.gesture_class,
                    predicted: p.class,
                    distance: s.distance,
                    selected,
                    selection_hit,
                    macs,
                }
            })
            .collect())
    });
    let mut out = Vec::with_capacity(records.len());
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub windows: usize,
    pub top1: f64,
    pub per_class: BTreeMap<usize, f64>,
    pub selection_accuracy: Option<f64>,
    pub flops: Option<FlopReport>,
    pub distance_bins: BTreeMap<Distance, f64>,
    pub relative_deterioration: Option<f64>,
}

impl EvalReport {
    pub fn from_results(results: &[WindowResult], num_classes: usize, flops: Option<FlopReport>) -> Result<EvalReport> {
        let preds: Vec<usize> = results.iter().map(|r| r.predicted).collect();
        let labels: Vec<usize> = results.iter().map(|r| r.label).collect();
        let top1 = top1_accuracy(&preds, &labels)?;
        let mut distance_bins = BTreeMap::new();
        for d in Distance::ALL {
            let (p, y): (Vec<usize>, Vec<usize>) =
                results.iter().filter(|r| r.distance == d).map(|r| (r.predicted, r.label)).unzip();
            if !y.is_empty() {
                distance_bins.insert(d, top1_accuracy(&p, &y)?);
            }
        }
        let relative_deterioration = match (distance_bins.get(&Distance::Near), distance_bins.get(&Distance::Far)) {
            (Some(&n), Some(&f)) => relative_deterioration(n, f),
            _ => None,
        };
        Ok(EvalReport {
            windows: results.len(),
            top1,
            per_class: per_class_accuracy(&preds, &labels, num_classes),
            selection_accuracy: selection_accuracy(results),
            flops,
            distance_bins,
            relative_deterioration,
        })
    }

    /// Long-format rows `(metric, key, value)`.
    fn rows(&self) -> Vec<(String, String, String)> {
        let mut rows = vec![
            ("windows".into(), String::new(), self.windows.to_string()),
            ("top1".into(), String::new(), self.top1.to_string()),
        ];
        for (c, v) in &self.per_class {
            rows.push(("per_class".into(), c.to_string(), v.to_string()));
        }
        if let Some(v) = self.selection_accuracy {
            rows.push(("selection_accuracy".into(), String::new(), v.to_string()));
        }
        if let Some(f) = &self.flops {
            for (name, macs) in f.entries() {
                rows.push(("macs".into(), name.into(), macs.to_string()));
            }
        }
        for (d, v) in &self.distance_bins {
            rows.push(("distance_top1".into(), d.to_string(), v.to_string()));
        }
        if let Some(v) = self.relative_deterioration {
            rows.push(("relative_deterioration".into(), String::new(), v.to_string()));
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "key", "value"])?;
        for (m, k, v) in self.rows() {
            w.write_record([m, k, v])?;
        }
        w.flush().map_err(io_err(format!("writing {}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<EvalReport> {
        let mut r = csv::Reader::from_path(path)?;
        let mut report = EvalReport {
            windows: 0,
            top1: 0.0,
            per_class: BTreeMap::new(),
            selection_accuracy: None,
            flops: None,
            distance_bins: BTreeMap::new(),
            relative_deterioration: None,
        };
        let bad = |what: &str| Error::Data(format!("{}: bad report row: {what}", path.display()));
        for row in r.records() {
            let row = row?;
            let (m, k, v) = (&row[0], &row[1], &row[2]);
            let num = || v.parse::<f64>().map_err(|_| bad(v));
            match m {
                "windows" => report.windows = v.parse().map_err(|_| bad(v))?,
                "top1" => report.top1 = num()?,
                "per_class" => {
                    report.per_class.insert(k.parse().map_err(|_| bad(k))?, num()?);
                }
                "selection_accuracy" => report.selection_accuracy = Some(num()?),
                "macs" => {
                    let f = report.flops.get_or_insert_with(FlopReport::default);
                    let macs: u64 = v.parse().map_err(|_| bad(v))?;
                    match k {
                        "extractor" => f.extractor = macs,
                        "selector" => f.selector = macs,
                        "classifier" => f.classifier = macs,
                        _ => return Err(bad(k)),
                    }
                }
                "distance_top1" => {
                    let d = Distance::ALL.into_iter().find(|d| d.as_str() == k).ok_or_else(|| bad(k))?;
                    report.distance_bins.insert(d, num()?);
                }
                "relative_deterioration" => report.relative_deterioration = Some(num()?),
                _ => return Err(bad(m)),
            }
        }
        Ok(report)
    }

    pub fn to_text(&self, class_names: Option<&[&str]>) -> String {
        let pct = |v: f64| format!("{:.2}%", v * 100.0);
        let mut s = format!("# {GFLOPS_CONVENTION}\n");
        let _ = writeln!(s, "windows evaluated     {}", self.windows);
        let _ = writeln!(s, "top-1 accuracy        {}", pct(self.top1));
        if let Some(v) = self.selection_accuracy {
            let _ = writeln!(s, "selection accuracy    {}", pct(v));
        }
        if let Some(f) = &self.flops {
            let _ = writeln!(s, "MACs per window       {} ({:.4} GFLOPS)", f.total(), f.gflops());
        }
        let _ = writeln!(s, "\n{:<6} {:<14} {:>9}", "class", "name", "top-1");
        for (c, v) in &self.per_class {
            let name = class_names.and_then(|n| n.get(*c)).copied().unwrap_or("");
            let _ = writeln!(s, "{c:<6} {name:<14} {:>9}", pct(*v));
        }
        let _ = writeln!(s, "\n{:<8} {:>9}", "distance", "top-1");
        for (d, v) in &self.distance_bins {
            let _ = writeln!(s, "{:<8} {:>9}", d.as_str(), pct(*v));
        }
        let det = self.relative_deterioration.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
        let _ = writeln!(s, "relative deterioration (near->far): {det}");
        s
    }

    /// Writes `accuracy_vs_flops.csv` (x = GFLOPS per window, y = top-1) and
    /// `accuracy_vs_distance.csv` (x = distance tag, y = top-1) into `dir`.
    pub fn write_plot_data(&self, dir: &Path, label: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let path = dir.join("accuracy_vs_flops.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["series", "x", "y"])?;
        if let Some(f) = &self.flops {
            w.write_record([label.to_string(), f.gflops().to_string(), self.top1.to_string()])?;
        }
        w.flush().map_err(io_err(format!("writing {}", path.display())))?;
        let path = dir.join("accuracy_vs_distance.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["series", "x", "y"])?;
        for (d, v) in &self.distance_bins {
            w.write_record([label.to_string(), d.to_string(), v.to_string()])?;
        }
        w.flush().map_err(io_err(format!("writing {}", path.display())))
    }
}
