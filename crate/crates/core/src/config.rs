//! Run configuration: network architecture, training recipe and dataset
//! generation parameters, serialized as JSON with unknown keys rejected.

use std::path::Path;

use dyngest_tensor::{conv_out_dim, Pool3dGeometry};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, Error, Result};

/// One `conv3d → batchnorm → relu` layer of the feature extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

/// The fixed selector sequence: conv_bn_relu → avgpool → conv_bn_relu →
/// global average pool → linear(→1) → sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorSpec {
    pub channels: [usize; 2],
    pub kernel: [usize; 3],
    pub pool_kernel: [usize; 3],
    pub pool_stride: [usize; 3],
}

/// A residual stage: conv_bn_relu → conv_bn, plus a shortcut, then relu.
/// The first convolution carries the stride; padding is `kernel / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[T, C, H, W]`
    pub input_dims: [usize; 4],
    /// `[T', C', H', W']`, checked against the extractor output.
    pub feature_dims: [usize; 4],
    /// `[m, n]` patch rows and columns.
    pub grid: [usize; 2],
    pub num_classes: usize,
    pub lambda: f64,
    pub extractor_spec: Vec<ConvSpec>,
    pub selector_spec: SelectorSpec,
    pub classifier_spec: Vec<StageSpec>,
    pub seed: u64,
}

const K3: [usize; 3] = [3, 3, 3];
const P1: [usize; 3] = [1, 1, 1];

impl NetworkConfig {
    /// 16×3×96×96 input, 8×16×24×24 features, 2×3 grid, 10 classes.
    pub fn desk() -> Self {
        NetworkConfig {
            input_dims: [16, 3, 96, 96],
            feature_dims: [8, 16, 24, 24],
            grid: [2, 3],
            num_classes: 10,
            lambda: 2.0,
            extractor_spec: vec![
                ConvSpec { out_channels: 4, kernel: K3, stride: [2, 2, 2], padding: P1 },
                ConvSpec { out_channels: 16, kernel: K3, stride: [1, 2, 2], padding: P1 },
            ],
            selector_spec: SelectorSpec {
                channels: [4, 4],
                kernel: K3,
                pool_kernel: [2, 2, 2],
                pool_stride: [2, 2, 2],
            },
            classifier_spec: vec![
                StageSpec { out_channels: 16, kernel: K3, stride: [1, 2, 2] },
                StageSpec { out_channels: 32, kernel: K3, stride: [2, 2, 2] },
                StageSpec { out_channels: 64, kernel: K3, stride: [2, 1, 1] },
            ],
            seed: 0,
        }
    }

    /// Ten classes on 8×1×64×64 clips (big enough for the synthetic
    /// gestures), 8×4×16×16 features, 2×2 grid. Seconds per epoch on small
    /// datasets; used for smoke runs and tests.
    pub fn small() -> Self {
        NetworkConfig {
            input_dims: [8, 1, 64, 64],
            feature_dims: [8, 4, 16, 16],
            grid: [2, 2],
            num_classes: 10,
            lambda: 2.0,
            extractor_spec: vec![ConvSpec { out_channels: 4, kernel: K3, stride: [1, 4, 4], padding: P1 }],
            selector_spec: SelectorSpec {
                channels: [2, 2],
                kernel: K3,
                pool_kernel: [2, 2, 2],
                pool_stride: [2, 2, 2],
            },
            classifier_spec: vec![StageSpec { out_channels: 8, kernel: K3, stride: [2, 2, 2] }],
            seed: 0,
        }
    }

    /// Two classes, 4×1×16×16 input, 4×2×8×8 features, 2×2 grid.
    pub fn tiny() -> Self {
        NetworkConfig {
            input_dims: [4, 1, 16, 16],
            feature_dims: [4, 2, 8, 8],
            grid: [2, 2],
            num_classes: 2,
            lambda: 2.0,
            extractor_spec: vec![ConvSpec { out_channels: 2, kernel: K3, stride: [1, 2, 2], padding: P1 }],
            selector_spec: SelectorSpec {
                channels: [2, 2],
                kernel: K3,
                pool_kernel: [1, 2, 2],
                pool_stride: [1, 2, 2],
            },
            classifier_spec: vec![StageSpec { out_channels: 3, kernel: K3, stride: [1, 2, 2] }],
            seed: 0,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid[0], self.grid[1])
    }

    pub fn num_patches(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    /// `[T', C', h_patch, w_patch]`
    pub fn patch_dims(&self) -> [usize; 4] {
        let [t, c, h, w] = self.feature_dims;
        [t, c, h / self.grid[0], w / self.grid[1]]
    }

    /// Runs the extractor shape arithmetic, returning `[T', C', H', W']`.
    pub fn derived_feature_dims(&self) -> Result<[usize; 4]> {
        let [mut t, mut c, mut h, mut w] = self.input_dims;
        for (i, layer) in self.extractor_spec.iter().enumerate() {
            let dims = [t, h, w];
            let mut out = [0; 3];
            for a in 0..3 {
                out[a] = conv_out_dim(dims[a], layer.kernel[a], layer.stride[a], layer.padding[a]).ok_or_else(|| {
                    config_err(format!(
                        "extractor layer {i}: kernel {:?} with padding {:?} does not fit input {dims:?}",
                        layer.kernel, layer.padding
                    ))
                })?;
            }
            [t, h, w] = out;
            c = layer.out_channels;
        }
        Ok([t, c, h, w])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.contains(&0) {
            return Err(config_err(format!("input_dims must be positive, got {:?}", self.input_dims)));
        }
        if self.num_classes < 2 {
            return Err(config_err(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(config_err(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.extractor_spec.is_empty() {
            return Err(config_err("extractor_spec must contain at least one layer"));
        }
        if self.classifier_spec.is_empty() {
            return Err(config_err("classifier_spec must contain at least one stage"));
        }
        let convs = self
            .extractor_spec
            .iter()
            .map(|l| (l.out_channels, l.kernel, l.stride))
            .chain(self.classifier_spec.iter().map(|s| (s.out_channels, s.kernel, s.stride)));
        for (out, kernel, stride) in convs {
            if out == 0 || kernel.contains(&0) || stride.contains(&0) {
                return Err(config_err(format!(
                    "layer with out_channels={out}, kernel={kernel:?}, stride={stride:?} has a zero entry"
                )));
            }
        }
        let derived = self.derived_feature_dims()?;
        if derived != self.feature_dims {
            return Err(config_err(format!(
                "extractor produces features {derived:?} but feature_dims is {:?}",
                self.feature_dims
            )));
        }
        let [m, n] = self.grid;
        let [_, _, fh, fw] = self.feature_dims;
        if m == 0 || n == 0 {
            return Err(config_err(format!("grid must be positive, got {m}x{n}")));
        }
        if fh % m != 0 || fw % n != 0 {
            return Err(config_err(format!(
                "grid {m}x{n} does not evenly divide features H'={fh}, W'={fw}"
            )));
        }
        self.validate_selector()?;
        self.validate_classifier()
    }

    fn validate_selector(&self) -> Result<()> {
        let s = &self.selector_spec;
        if s.channels.contains(&0) || s.kernel.contains(&0) || s.kernel.iter().any(|k| k % 2 == 0) {
            return Err(config_err(format!(
                "selector channels {:?} must be positive and kernel {:?} odd",
                s.channels, s.kernel
            )));
        }
        let [t, c, h, w] = self.patch_dims();
        // same-padded convolutions keep the patch extent; only the pool shrinks it
        Pool3dGeometry::new(&[1, c, t, h, w], s.pool_kernel, s.pool_stride)
            .map_err(|e| config_err(format!("selector pool does not fit patch {t}x{h}x{w}: {e}")))?;
        Ok(())
    }

    fn validate_classifier(&self) -> Result<()> {
        let [mut t, _, mut h, mut w] = self.patch_dims();
        for (i, st) in self.classifier_spec.iter().enumerate() {
            let dims = [t, h, w];
            let mut out = [0; 3];
            for a in 0..3 {
                out[a] = conv_out_dim(dims[a], st.kernel[a], st.stride[a], st.kernel[a] / 2)
                    .ok_or_else(|| config_err(format!("classifier stage {i} does not fit patch extent {dims:?}")))?;
            }
            [t, h, w] = out;
        }
        Ok(())
    }
}

/// Which network a run trains or evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Extractor → selector → classifier on the selected patch.
    Dynamic,
    /// Extractor → classifier on the full feature map, no selector.
    Static,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Dynamic => "dynamic",
            Pipeline::Static => "static",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub seed: u64,
    pub determinism: bool,
    pub checkpoint_every: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr0: 1e-3,
            momentum: 0.9,
            seed: 0,
            determinism: true,
            checkpoint_every: 5,
            eval_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(config_err(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.checkpoint_every == 0 || self.eval_every == 0 {
            return Err(config_err("checkpoint_every and eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// Synthetic dataset generation parameters. Clip geometry comes from the
/// network input dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub num_clips: usize,
    pub num_classes: usize,
    pub near_fraction: f64,
    pub train_fraction: f64,
    pub noise_sigma: f64,
    pub num_distractors: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            num_clips: 2000,
            num_classes: 10,
            near_fraction: 0.5,
            train_fraction: 0.8,
            noise_sigma: 0.1,
            num_distractors: 2,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clips == 0 {
            return Err(config_err("num_clips must be at least 1"));
        }
        if !(1..=10).contains(&self.num_classes) {
            return Err(config_err(format!("num_classes must lie in 1..=10, got {}", self.num_classes)));
        }
        for (name, v) in [("near_fraction", self.near_fraction), ("train_fraction", self.train_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(config_err(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Everything one CLI invocation needs; persisted next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: Pipeline::Dynamic,
            network: NetworkConfig::desk(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.num_classes > self.network.num_classes {
            return Err(config_err(format!(
                "dataset has {} classes but the network only {}",
                self.data.num_classes, self.network.num_classes
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json { path: origin.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(io_err(format!("writing {}", path.display())))
    }

    /// Applies a `dotted.key=value` override. The key must already exist;
    /// the value is parsed as JSON, falling back to a plain string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(format!("override '{assignment}' is not of the form key=value")))?;
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => map.get_mut(part),
                serde_json::Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| config_err(format!("override key '{key}' does not name a config field")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        serde_json::from_value(doc).map_err(|e| config_err(format!("override '{assignment}': {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_tiny_are_valid() {
        NetworkConfig::desk().validate().unwrap();
        NetworkConfig::tiny().validate().unwrap();
        RunConfig::default().validate().unwrap();
        assert_eq!(NetworkConfig::desk().patch_dims(), [8, 16, 12, 8]);
    }

    #[test]
    fn desk_extractor_arithmetic() {
        assert_eq!(NetworkConfig::desk().derived_feature_dims().unwrap(), [8, 16, 24, 24]);
    }

    #[test]
    fn non_divisible_grid_is_rejected() {
        let mut c = NetworkConfig::desk();
        c.grid = [5, 3];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("does not evenly divide"), "{err}");
    }

    #[test]
    fn feature_dims_must_match_extractor() {
        let mut c = NetworkConfig::desk();
        c.feature_dims = [8, 16, 28, 28];
        assert!(c.validate().unwrap_err().to_string().contains("extractor produces"));
    }

    #[test]
    fn scalar_constraints() {
        let mut c = NetworkConfig::desk();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk();
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        let t = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(t.validate().unwrap_err().to_string().contains("epochs"));
        let t = TrainConfig { lr0: 0.0, ..TrainConfig::default() };
        assert!(t.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut doc = serde_json::to_value(RunConfig::default()).unwrap();
        doc["network"]["dropout"] = serde_json::json!(0.5);
        let err = RunConfig::from_json(&doc.to_string(), Path::new("x.json")).unwrap_err();
        assert!(err.to_string().contains("dropout"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json(), Path::new("x")).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default();
        let d = c.with_override("train.lr0=0.05").unwrap();
        assert_eq!(d.train.lr0, 0.05);
        let d = d.with_override("network.grid=[2,2]").unwrap();
        assert_eq!(d.network.grid, [2, 2]);
        let d = d.with_override("pipeline=static").unwrap();
        assert_eq!(d.pipeline, Pipeline::Static);
        let d = d.with_override("network.extractor_spec.0.out_channels=8").unwrap();
        assert_eq!(d.network.extractor_spec[0].out_channels, 8);
        assert!(c.with_override("train.warmup=3").is_err());
        assert!(c.with_override("train.lr0").is_err());
        assert!(c.with_override("train.epochs=\"many\"").is_err());
    }
}
