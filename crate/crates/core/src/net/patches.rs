//! Patch tiling of the feature map, per-patch confidence scores, argmax
//! selection and bounding-box-derived patch labels.

use dyngest_tensor::{Element, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{config_err, Result};

/// Default minimum fraction of the bounding box a patch must cover.
pub const LABEL_THRESHOLD: f64 = 0.25;

/// The m×n tiling of a batch of feature maps, held as one graph variable of
/// shape `[N·m·n, C', T', h_patch, w_patch]` ordered sample-major, then
/// row-major over the grid.
#[derive(Clone, Copy, Debug)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub h_patch: usize,
    pub w_patch: usize,
    pub batch: usize,
    pub patches: Var,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    /// Row of `patches` holding patch (i, j) of `sample`.
    pub fn row_of(&self, sample: usize, i: usize, j: usize) -> usize {
        (sample * self.rows + i) * self.cols + j
    }

    /// Copies out patch (i, j) of `sample` as `[C', T', h_patch, w_patch]`.
    pub fn patch<T: Element>(&self, g: &Graph<T>, sample: usize, i: usize, j: usize) -> Tensor<T> {
        g.value(self.patches).slice_outer(self.row_of(sample, i, j)).expect("row within patch batch")
    }

    /// Writes every patch back to its region, reproducing the feature map.
    pub fn reassemble<T: Element>(&self, g: &Graph<T>) -> Tensor<T> {
        let shape = g.shape(self.patches);
        let (c, t) = (shape[1], shape[2]);
        let (hh, ww) = (self.h_patch * self.rows, self.w_patch * self.cols);
        let mut out = vec![T::zero(); self.batch * c * t * hh * ww];
        for s in 0..self.batch {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    let p = self.patch(g, s, i, j);
                    let p = p.data();
                    for ch in 0..c * t {
                        for y in 0..self.h_patch {
                            let src = (ch * self.h_patch + y) * self.w_patch;
                            let dst = ((s * c * t + ch) * hh + i * self.h_patch + y) * ww + j * self.w_patch;
                            out[dst..dst + self.w_patch].copy_from_slice(&p[src..src + self.w_patch]);
                        }
                    }
                }
            }
        }
        Tensor::new(vec![self.batch, c, t, hh, ww], out).expect("reassembled shape")
    }
}

/// Splits `[N, C', T', H', W']` features into an m×n grid. Gradients flow
/// from the patches back into the features.
pub fn split_patches<T: Element>(g: &mut Graph<T>, features: Var, grid: (usize, usize)) -> Result<PatchGrid> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 5 {
        return Err(config_err(format!("features must be [N, C', T', H', W'], got {shape:?}")));
    }
    let patches = g.patchify(features, grid)?;
    Ok(PatchGrid {
        rows: grid.0,
        cols: grid.1,
        h_patch: shape[3] / grid.0,
        w_patch: shape[4] / grid.1,
        batch: shape[0],
        patches,
    })
}

/// Index of the first maximal entry in row-major order.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Confidence scores of one sample's patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchScores {
    pub rows: usize,
    pub cols: usize,
    /// Row-major selector logits.
    pub logits: Vec<f64>,
    /// `sigmoid(logits)`, evaluated in 64-bit so distinct logits rarely tie.
    pub scores: Vec<f64>,
    pub selected: (usize, usize),
    pub selected_score: f64,
}

impl PatchScores {
    pub fn from_logits(rows: usize, cols: usize, logits: Vec<f64>) -> Self {
        let scores: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        Self::from_parts(rows, cols, logits, scores)
    }

    /// Builds scores from explicit values; `logits` may be empty.
    pub fn from_scores(rows: usize, cols: usize, scores: Vec<f64>) -> Self {
        let logits = scores.iter().map(|&s| (s / (1.0 - s)).ln()).collect();
        Self::from_parts(rows, cols, logits, scores)
    }

    fn from_parts(rows: usize, cols: usize, logits: Vec<f64>, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), rows * cols, "one score per patch");
        let k = argmax_first(&scores);
        PatchScores { rows, cols, selected: (k / cols, k % cols), selected_score: scores[k], logits, scores }
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols + j]
    }

    pub fn selected_flat(&self) -> usize {
        self.selected.0 * self.cols + self.selected.1
    }
}

/// Picks the selected patch of every sample, `[N, C', T', h, w]`. The choice
/// itself is not differentiated; gradients reach the chosen patch values.
pub fn select_patch<T: Element>(g: &mut Graph<T>, grid: &PatchGrid, scores: &[PatchScores]) -> Result<Var> {
    let rows: Vec<usize> = scores
        .iter()
        .enumerate()
        .map(|(s, sc)| grid.row_of(s, sc.selected.0, sc.selected.1))
        .collect();
    Ok(g.gather_rows(grid.patches, &rows)?)
}

/// Axis-aligned pixel rectangle; zero width or height means no gesture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn is_empty(&self) -> bool {
        self.w <= 0 || self.h <= 0
    }

    pub fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            self.w * self.h
        }
    }

    /// Intersection with `[0, width) × [0, height)`.
    pub fn clipped(&self, width: i64, height: i64) -> BBox {
        let x0 = self.x.clamp(0, width);
        let y0 = self.y.clamp(0, height);
        let x1 = (self.x + self.w.max(0)).clamp(0, width);
        let y1 = (self.y + self.h.max(0)).clamp(0, height);
        BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn contains(&self, px: i64, py: i64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

/// Binary "contains the gesture" label per patch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchLabels {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u8>,
}

impl PatchLabels {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.cols + j]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Labels each patch 1 when it covers at least `threshold` of the bounding
/// box after scaling the box into feature coordinates.
pub fn derive_patch_labels_with(bbox: BBox, config: &NetworkConfig, threshold: f64) -> PatchLabels {
    let [_, _, h, w] = config.input_dims;
    let [_, _, fh, fw] = config.feature_dims;
    let (rows, cols) = config.grid();
    let mut labels = vec![0u8; rows * cols];
    let b = bbox.clipped(w as i64, h as i64);
    if !b.is_empty() {
        let (sy, sx) = (fh as f64 / h as f64, fw as f64 / w as f64);
        let (x0, x1) = (b.x as f64 * sx, (b.x + b.w) as f64 * sx);
        let (y0, y1) = (b.y as f64 * sy, (b.y + b.h) as f64 * sy);
        let area = (x1 - x0) * (y1 - y0);
        let (ph, pw) = ((fh / rows) as f64, (fw / cols) as f64);
        for i in 0..rows {
            for j in 0..cols {
                let oy = (y1.min((i + 1) as f64 * ph) - y0.max(i as f64 * ph)).max(0.0);
                let ox = (x1.min((j + 1) as f64 * pw) - x0.max(j as f64 * pw)).max(0.0);
                if ox * oy / area >= threshold {
                    labels[i * cols + j] = 1;
                }
            }
        }
    }
    PatchLabels { rows, cols, labels }
}

pub fn derive_patch_labels(bbox: BBox, config: &NetworkConfig) -> PatchLabels {
    derive_patch_labels_with(bbox, config, LABEL_THRESHOLD)
}
