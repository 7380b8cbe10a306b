//! The three-block dynamic network: a shallow 3D-conv feature extractor over
//! the whole field of view, a weight-shared patch scorer, and a residual 3D
//! classifier that only sees the highest-scoring patch.
//!
//! The static baseline reuses the extractor and classifier but feeds the
//! classifier the full feature map and has no scorer.

pub mod checkpoint;
pub mod loss;
pub mod patches;

use dyngest_tensor::nn::{Conv3d, ConvBnRelu, Linear};
use dyngest_tensor::{macs_to_gflops, Element, FlopCounter, Graph, Mode, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, Pipeline};
use crate::error::{config_err, Result};

pub use loss::{compute_loss, LossBreakdown};
pub use patches::{
    argmax_first, derive_patch_labels, select_patch, split_patches, BBox, PatchGrid, PatchLabels, PatchScores,
};

pub const EXTRACTOR: &str = "extractor";
pub const SELECTOR: &str = "selector";
pub const CLASSIFIER: &str = "classifier";

/// Multiply-accumulate counts per block for one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub extractor: u64,
    pub selector: u64,
    pub classifier: u64,
}

impl FlopReport {
    pub fn from_counter(counter: &FlopCounter) -> Self {
        FlopReport {
            extractor: counter.total_for(EXTRACTOR),
            selector: counter.total_for(SELECTOR),
            classifier: counter.total_for(CLASSIFIER),
        }
    }

    pub fn total(&self) -> u64 {
        self.extractor + self.selector + self.classifier
    }

    /// `(label, MACs)` for the three blocks.
    pub fn entries(&self) -> [(&'static str, u64); 3] {
        [(EXTRACTOR, self.extractor), (SELECTOR, self.selector), (CLASSIFIER, self.classifier)]
    }

    pub fn gflops(&self) -> f64 {
        macs_to_gflops(self.total())
    }
}

#[derive(Clone, Debug)]
struct Selector {
    conv1: ConvBnRelu,
    conv2: ConvBnRelu,
    head: Linear,
    pool_kernel: [usize; 3],
    pool_stride: [usize; 3],
}

impl Selector {
    fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, patches: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, patches)?;
        let h = g.avgpool3d(h, self.pool_kernel, self.pool_stride)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = g.global_avg_pool(h)?;
        Ok(self.head.forward(g, store, h)?)
    }
}

#[derive(Clone, Debug)]
struct ResidualStage {
    conv1: ConvBnRelu,
    conv2: ConvBnRelu,
    shortcut: Option<Conv3d>,
}

impl ResidualStage {
    fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = self.conv2.forward_pre_activation(g, store, h)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(g, store, x)?,
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }
}

#[derive(Clone, Debug)]
struct Classifier {
    stages: Vec<ResidualStage>,
    head: Linear,
}

impl Classifier {
    fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for stage in &self.stages {
            h = stage.forward(g, store, h)?;
        }
        let pooled = g.global_avg_pool(h)?;
        Ok(self.head.forward(g, store, pooled)?)
    }
}

/// How the classified patch is chosen.
#[derive(Clone, Copy, Debug)]
pub enum Selection<'a> {
    /// Row-major-first argmax of the scores.
    Argmax,
    /// Given flat patch index per sample, e.g. to hold the choice fixed
    /// under finite-difference perturbation.
    Fixed(&'a [usize]),
}

/// Graph handles and host-side results of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Class logits `[N, num_classes]`.
    pub logits: Var,
    /// Selector logits `[N, m·n]`; absent for the static pipeline.
    pub selector_logits: Option<Var>,
    /// Per-sample scores; empty for the static pipeline.
    pub scores: Vec<PatchScores>,
    pub flops: FlopReport,
}

/// Eval-mode result for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
    pub scores: Option<PatchScores>,
}

impl Prediction {
    pub fn selected(&self) -> Option<(usize, usize)> {
        self.scores.as_ref().map(|s| s.selected)
    }
}

#[derive(Clone, Debug)]
pub struct GestureNet<T: Element> {
    config: NetworkConfig,
    pipeline: Pipeline,
    store: ParamStore<T>,
    extractor: Vec<ConvBnRelu>,
    selector: Option<Selector>,
    classifier: Classifier,
}

fn same_padding(kernel: [usize; 3]) -> [usize; 3] {
    kernel.map(|k| k / 2)
}

impl<T: Element> GestureNet<T> {
    /// Builds and initializes a model from the config seed.
    pub fn new(config: NetworkConfig, pipeline: Pipeline) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        let mut channels = config.input_dims[1];
        let mut extractor = Vec::new();
        for (i, l) in config.extractor_spec.iter().enumerate() {
            let name = format!("{EXTRACTOR}.layer{i}");
            extractor.push(ConvBnRelu::new(
                &mut store,
                &name,
                channels,
                l.out_channels,
                l.kernel,
                l.stride,
                l.padding,
                &mut rng,
            )?);
            channels = l.out_channels;
        }
        let feature_channels = channels;

        let selector = match pipeline {
            Pipeline::Static => None,
            Pipeline::Dynamic => {
                let s = &config.selector_spec;
                let pad = same_padding(s.kernel);
                let c1 = format!("{SELECTOR}.conv1");
                let c2 = format!("{SELECTOR}.conv2");
                Some(Selector {
                    conv1: ConvBnRelu::new(&mut store, &c1, feature_channels, s.channels[0], s.kernel, [1; 3], pad, &mut rng)?,
                    conv2: ConvBnRelu::new(&mut store, &c2, s.channels[0], s.channels[1], s.kernel, [1; 3], pad, &mut rng)?,
                    head: Linear::new(&mut store, &format!("{SELECTOR}.head"), s.channels[1], 1, 1.0, &mut rng)?,
                    pool_kernel: s.pool_kernel,
                    pool_stride: s.pool_stride,
                })
            }
        };

        let mut stages = Vec::new();
        for (k, st) in config.classifier_spec.iter().enumerate() {
            let name = format!("{CLASSIFIER}.stage{k}");
            let pad = same_padding(st.kernel);
            let conv1 = ConvBnRelu::new(
                &mut store,
                &format!("{name}.conv1"),
                channels,
                st.out_channels,
                st.kernel,
                st.stride,
                pad,
                &mut rng,
            )?;
            let conv2 = ConvBnRelu::new(
                &mut store,
                &format!("{name}.conv2"),
                st.out_channels,
                st.out_channels,
                st.kernel,
                [1; 3],
                pad,
                &mut rng,
            )?;
            let shortcut = if channels != st.out_channels || st.stride != [1; 3] {
                Some(Conv3d::new(
                    &mut store,
                    &format!("{name}.shortcut"),
                    channels,
                    st.out_channels,
                    [1; 3],
                    st.stride,
                    [0; 3],
                    true,
                    &mut rng,
                )?)
            } else {
                None
            };
            stages.push(ResidualStage { conv1, conv2, shortcut });
            channels = st.out_channels;
        }
        let head = Linear::new(&mut store, &format!("{CLASSIFIER}.head"), channels, config.num_classes, 1.0, &mut rng)?;

        Ok(GestureNet { config, pipeline, store, extractor, selector, classifier: Classifier { stages, head } })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn pipeline(&self) -> Pipeline {
        self.pipeline
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Names of the parameters belonging to one block (`"extractor"`, ...).
    pub fn block_params(&self, block: &str) -> Vec<String> {
        let prefix = format!("{block}.");
        self.store.params().iter().filter(|p| p.name.starts_with(&prefix)).map(|p| p.name.clone()).collect()
    }

    /// Same weights in another precision.
    pub fn cast<U: Element>(&self) -> GestureNet<U> {
        GestureNet {
            config: self.config.clone(),
            pipeline: self.pipeline,
            store: self.store.cast(),
            extractor: self.extractor.clone(),
            selector: self.selector.clone(),
            classifier: self.classifier.clone(),
        }
    }

    fn check_clip(&self, shape: &[usize]) -> Result<()> {
        let [t, c, h, w] = self.config.input_dims;
        if shape.len() != 5 || shape[1..] != [c, t, h, w] {
            return Err(config_err(format!(
                "clip batch must be [N, {c}, {t}, {h}, {w}] (N, C, T, H, W), got {shape:?}"
            )));
        }
        Ok(())
    }

    /// `[N, C, T, H, W]` → `[N, C', T', H', W']`, recorded under "extractor".
    pub fn extract_features(&self, g: &mut Graph<T>, clip: Var) -> Result<Var> {
        self.check_clip(g.shape(clip))?;
        g.push_scope(EXTRACTOR);
        let mut h = clip;
        let result = (|| {
            for layer in &self.extractor {
                h = layer.forward(g, &self.store, h)?;
            }
            Ok(h)
        })();
        g.pop_scope();
        result
    }

    /// Scores every patch with the shared selector; returns the `[N, m·n]`
    /// logits and per-sample scores.
    pub fn score_patches(&self, g: &mut Graph<T>, grid: &PatchGrid) -> Result<(Var, Vec<PatchScores>)> {
        let selector = self
            .selector
            .as_ref()
            .ok_or_else(|| config_err("the static pipeline has no patch selector"))?;
        g.push_scope(SELECTOR);
        let logits = selector.forward(g, &self.store, grid.patches);
        g.pop_scope();
        let logits = g.reshape(logits?, &[grid.batch, grid.num_patches()])?;
        let values = g.value(logits).to_f64_vec();
        let p = grid.num_patches();
        let scores = (0..grid.batch)
            .map(|s| PatchScores::from_logits(grid.rows, grid.cols, values[s * p..(s + 1) * p].to_vec()))
            .collect();
        Ok((logits, scores))
    }

    /// `[N, C', T', h, w]` → class logits `[N, num_classes]`, recorded under "classifier".
    pub fn classify_patch(&self, g: &mut Graph<T>, patch: Var) -> Result<Var> {
        let shape = g.shape(patch);
        let c = self.config.feature_dims[1];
        if shape.len() != 5 || shape[1] != c {
            return Err(config_err(format!("classifier expects [N, {c}, T', h, w] input, got {shape:?}")));
        }
        g.push_scope(CLASSIFIER);
        let out = self.classifier.forward(g, &self.store, patch);
        g.pop_scope();
        out
    }

    pub fn forward(&self, g: &mut Graph<T>, clip: Var) -> Result<Forward> {
        self.forward_with(g, clip, Selection::Argmax)
    }

    pub fn forward_with(&self, g: &mut Graph<T>, clip: Var, selection: Selection<'_>) -> Result<Forward> {
        let before = FlopReport::from_counter(g.flops());
        let features = self.extract_features(g, clip)?;
        let (logits, selector_logits, scores) = match self.pipeline {
            Pipeline::Static => (self.classify_patch(g, features)?, None, Vec::new()),
            Pipeline::Dynamic => {
                let grid = split_patches(g, features, self.config.grid())?;
                let (sel_logits, mut scores) = self.score_patches(g, &grid)?;
                if let Selection::Fixed(idx) = selection {
                    if idx.len() != grid.batch || idx.iter().any(|&k| k >= grid.num_patches()) {
                        return Err(config_err(format!(
                            "fixed selection {idx:?} invalid for {} samples of {} patches",
                            grid.batch,
                            grid.num_patches()
                        )));
                    }
                    for (s, &k) in scores.iter_mut().zip(idx) {
                        s.selected = (k / grid.cols, k % grid.cols);
                        s.selected_score = s.scores[k];
                    }
                }
                let patch = select_patch(g, &grid, &scores)?;
                (self.classify_patch(g, patch)?, Some(sel_logits), scores)
            }
        };
        let after = FlopReport::from_counter(g.flops());
        let flops = FlopReport {
            extractor: after.extractor - before.extractor,
            selector: after.selector - before.selector,
            classifier: after.classifier - before.classifier,
        };
        Ok(Forward { logits, selector_logits, scores, flops })
    }

    /// Eval-mode predictions for a `[N, C, T, H, W]` batch.
    pub fn predict(&self, clips: &Tensor<T>) -> Result<(Vec<Prediction>, FlopReport)> {
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(clips.clone());
        let fwd = self.forward(&mut g, x)?;
        let probs = g.softmax(fwd.logits)?;
        let k = self.config.num_classes;
        let values = g.value(probs).to_f64_vec();
        let mut scores = fwd.scores.into_iter();
        let preds = values
            .chunks(k)
            .map(|row| Prediction { class: argmax_first(row), probabilities: row.to_vec(), scores: scores.next() })
            .collect();
        Ok((preds, fwd.flops))
    }

    /// MACs of one window, counted by a forward pass on a zero clip.
    pub fn window_flops(&self) -> Result<FlopReport> {
        let [t, c, h, w] = self.config.input_dims;
        // train-mode normalization so uninitialized running stats are not needed
        let mut g = Graph::new(Mode::Train);
        let x = g.input(Tensor::zeros(&[1, c, t, h, w]));
        Ok(self.forward(&mut g, x)?.flops)
    }
}
