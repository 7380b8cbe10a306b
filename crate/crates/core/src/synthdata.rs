//! Deterministic synthetic long-distance gesture clips.
//!
//! A clip is a `[C, T, H, W]` video of Gaussian sensor noise with a few dim
//! distractor blobs drifting across it and one small square "hand" blob
//! performing one of ten motion patterns. Distance is modelled as blob size
//! and contrast: near blobs are 12 px at full intensity, far blobs 6 px at
//! half intensity, and far motion extents shrink by the same factor.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use dyngest_tensor::{serialize, DType, Tensor, TensorError};
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::error::{config_err, io_err, Error, Result};
use crate::net::BBox;
use crate::parallel;

pub const NUM_GESTURES: usize = 10;
pub const GESTURE_NAMES: [&str; NUM_GESTURES] = [
    "swipe-left",
    "swipe-right",
    "swipe-up",
    "swipe-down",
    "circle-cw",
    "circle-ccw",
    "static",
    "blink",
    "expand",
    "shrink",
];
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;
pub const DEFAULT_DISTRACTORS: usize = 2;
/// Blink alternates full and this fraction of the contrast every two frames.
pub const BLINK_LOW: f64 = 0.25;
pub const BLINK_PERIOD: usize = 4;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLIPS_DIR: &str = "clips";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Near,
    Far,
}

impl Distance {
    pub const ALL: [Distance; 2] = [Distance::Near, Distance::Far];

    pub fn blob_size(self) -> f64 {
        match self {
            Distance::Near => 12.0,
            Distance::Far => 6.0,
        }
    }

    pub fn contrast(self) -> f64 {
        match self {
            Distance::Near => 1.0,
            Distance::Far => 0.5,
        }
    }

    /// Apparent motion scales with apparent size.
    fn motion_scale(self) -> f64 {
        self.blob_size() / Distance::Near.blob_size()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Near => "near",
            Distance::Far => "far",
        }
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of one generated clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub gesture_class: usize,
    /// Pixel `(x, y)` the motion pattern is centred on.
    pub anchor: (i64, i64),
    pub distance: Distance,
    pub noise_sigma: f64,
    pub num_distractors: usize,
    pub seed: u64,
}

impl ClipSpec {
    /// Default noise and distractors; `input_dims` is `[T, C, H, W]`.
    pub fn new(input_dims: [usize; 4], gesture_class: usize, anchor: (i64, i64), distance: Distance, seed: u64) -> Self {
        let [frames, channels, height, width] = input_dims;
        ClipSpec {
            frames,
            channels,
            height,
            width,
            gesture_class,
            anchor,
            distance,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            num_distractors: DEFAULT_DISTRACTORS,
            seed,
        }
    }

    pub fn blob_size(&self) -> f64 {
        self.distance.blob_size()
    }

    pub fn contrast(&self) -> f64 {
        self.distance.contrast()
    }

    /// Blob centre offset from the anchor and blob side length at frame `t`.
    fn pose(&self, t: usize) -> (f64, f64, f64) {
        let s0 = self.blob_size();
        let k = self.distance.motion_scale();
        let tf = t as f64;
        let u = if self.frames > 1 { tf / (self.frames - 1) as f64 } else { 0.0 };
        let v = 2.0 * k;
        let r = s0;
        let theta = 2.0 * std::f64::consts::PI * tf / self.frames as f64;
        match self.gesture_class {
            0 => (-v * tf, 0.0, s0),
            1 => (v * tf, 0.0, s0),
            2 => (0.0, -v * tf, s0),
            3 => (0.0, v * tf, s0),
            4 => (r * theta.cos(), r * theta.sin(), s0),
            5 => (r * theta.cos(), -r * theta.sin(), s0),
            8 => (0.0, 0.0, s0 * (1.0 + u)),
            9 => (0.0, 0.0, s0 * (1.0 - 0.5 * u)),
            _ => (0.0, 0.0, s0),
        }
    }

    /// Peak blob intensity at frame `t`.
    pub fn intensity(&self, t: usize) -> f64 {
        if self.gesture_class == 7 && (t / (BLINK_PERIOD / 2)) % 2 == 1 {
            self.contrast() * BLINK_LOW
        } else {
            self.contrast()
        }
    }

    /// Pixel rectangle covered by the blob at frame `t`.
    pub fn blob_rect(&self, t: usize) -> BBox {
        let (dx, dy, s) = self.pose(t);
        let side = (s + 0.5).floor().max(1.0) as i64;
        let half = side as f64 / 2.0;
        // floor(v + 0.5) rather than round() keeps rasterization translation invariant
        let x = (self.anchor.0 as f64 + dx - half + 0.5).floor() as i64;
        let y = (self.anchor.1 as f64 + dy - half + 0.5).floor() as i64;
        BBox::new(x, y, side, side)
    }

    /// Pixels the anchor must keep from each border: `[left, right, top, bottom]`.
    pub fn required_margins(&self) -> [i64; 4] {
        let (ax, ay) = self.anchor;
        let mut m = [i64::MIN; 4];
        for t in 0..self.frames {
            let b = self.blob_rect(t);
            m[0] = m[0].max(ax - b.x);
            m[1] = m[1].max(b.x + b.w - ax);
            m[2] = m[2].max(ay - b.y);
            m[3] = m[3].max(b.y + b.h - ay);
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(config_err("clip dimensions must be positive"));
        }
        if self.gesture_class >= NUM_GESTURES {
            return Err(config_err(format!("gesture class {} is not in 0..{NUM_GESTURES}", self.gesture_class)));
        }
        let limit = self.height.min(self.width) as f64 / 4.0;
        if self.blob_size() >= limit {
            return Err(config_err(format!(
                "blob size {} must be below min(H, W)/4 = {limit}",
                self.blob_size()
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(config_err(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let [l, r, t, b] = self.required_margins();
        let (ax, ay) = self.anchor;
        let (w, h) = (self.width as i64, self.height as i64);
        if ax - l < 0 || ax + r > w || ay - t < 0 || ay + b > h {
            return Err(config_err(format!(
                "anchor ({ax}, {ay}) is too close to the border for class {} ({}): it needs a margin of \
                 {l} px left, {r} px right, {t} px above and {b} px below in a {w}x{h} frame",
                self.gesture_class, GESTURE_NAMES[self.gesture_class]
            )));
        }
        Ok(())
    }
}

/// Adds `value` over the part of `rect` inside a `w × h` plane.
fn paint(plane: &mut [f64], w: usize, h: usize, rect: BBox, value: f64) {
    let r = rect.clipped(w as i64, h as i64);
    for y in r.y..r.y + r.h {
        let row = &mut plane[y as usize * w..][..w];
        for v in &mut row[r.x as usize..(r.x + r.w) as usize] {
            *v += value;
        }
    }
}

/// Renders a clip as a `[C, T, H, W]` tensor with values in `[0, 1]`, and the
/// blob's bounding box in every frame. Fully determined by `spec`.
pub fn generate_clip(spec: &ClipSpec) -> Result<(Tensor<f32>, Vec<BBox>)> {
    spec.validate()?;
    let (t_n, c_n, h, w) = (spec.frames, spec.channels, spec.height, spec.width);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);

    struct Distractor {
        side: i64,
        intensity: f64,
        start: (f64, f64),
        velocity: (f64, f64),
    }
    let distractors: Vec<Distractor> = (0..spec.num_distractors)
        .map(|_| Distractor {
            side: rng.random_range(3..=8),
            intensity: rng.random_range(0.15..0.3),
            start: (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)),
            velocity: (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        })
        .collect();

    let mut signal = vec![0.0f64; t_n * h * w];
    let mut bboxes = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let plane = &mut signal[t * h * w..][..h * w];
        for d in &distractors {
            let x = (d.start.0 + d.velocity.0 * t as f64).floor() as i64;
            let y = (d.start.1 + d.velocity.1 * t as f64).floor() as i64;
            paint(plane, w, h, BBox::new(x, y, d.side, d.side), d.intensity);
        }
        let rect = spec.blob_rect(t);
        paint(plane, w, h, rect, spec.intensity(t));
        bboxes.push(rect);
    }

    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    let mut data = Vec::with_capacity(c_n * signal.len());
    for _ in 0..c_n {
        for &s in &signal {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            data.push((s + n).clamp(0.0, 1.0) as f32);
        }
    }
    let clip = Tensor::new(vec![c_n, t_n, h, w], data).expect("clip shape matches data");
    Ok((clip, bboxes))
}

/// Smallest box containing every non-empty box.
pub fn union_bbox(boxes: &[BBox]) -> BBox {
    let live: Vec<&BBox> = boxes.iter().filter(|b| !b.is_empty()).collect();
    if live.is_empty() {
        return BBox::default();
    }
    let x0 = live.iter().map(|b| b.x).min().unwrap();
    let y0 = live.iter().map(|b| b.y).min().unwrap();
    let x1 = live.iter().map(|b| b.x + b.w).max().unwrap();
    let y1 = live.iter().map(|b| b.y + b.h).max().unwrap();
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: usize,
    /// Path relative to the dataset root.
    pub file: String,
    pub gesture_class: usize,
    pub distance_tag: Distance,
    pub split: Split,
    pub bboxes: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// `[T, C, H, W]` of every clip.
    pub input_dims: [usize; 4],
    pub num_classes: usize,
    pub seed: u64,
    pub clips: Vec<ClipRecord>,
}

impl Manifest {
    /// Structural checks; with `root`, also that every clip file exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", self.format_version)));
        }
        let mut ids = HashSet::new();
        for c in &self.clips {
            if !ids.insert(c.id) {
                return Err(Error::Data(format!("duplicate clip id {}", c.id)));
            }
            if c.bboxes.len() != self.input_dims[0] {
                return Err(Error::Data(format!(
                    "clip {} has {} bounding boxes for {} frames",
                    c.id,
                    c.bboxes.len(),
                    self.input_dims[0]
                )));
            }
            if c.gesture_class >= self.num_classes {
                return Err(Error::Data(format!("clip {} has class {} of {}", c.id, c.gesture_class, self.num_classes)));
            }
            if let Some(root) = root {
                let path = root.join(&c.file);
                if !path.is_file() {
                    return Err(Error::Data(format!("clip {} file {} does not exist", c.id, path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

/// Per-clip generation plan: spec and split, in id order.
pub fn plan_dataset(input_dims: [usize; 4], data: &DataConfig) -> Result<Vec<(ClipSpec, Split)>> {
    data.validate()?;
    let (n, k) = (data.num_clips, data.num_classes);
    let class_size = |c: usize| n / k + usize::from(c < n % k);
    // id i has class i % k and is the (i / k)-th clip of its class
    let distance_of = |i: usize| {
        let near = (class_size(i % k) as f64 * data.near_fraction).round() as usize;
        if i / k < near {
            Distance::Near
        } else {
            Distance::Far
        }
    };

    // train quotas per (class, distance) group by largest remainder
    let mut groups: Vec<((usize, Distance), usize)> = Vec::new();
    for c in 0..k {
        for d in Distance::ALL {
            let size = (c..n).step_by(k).filter(|&i| distance_of(i) == d).count();
            groups.push(((c, d), size));
        }
    }
    let target = (n as f64 * data.train_fraction).round() as usize;
    let exact: Vec<f64> = groups.iter().map(|(_, s)| *s as f64 * data.train_fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    for &g in order.iter().cycle().take(groups.len() * 2) {
        if assigned >= target {
            break;
        }
        if quota[g] < groups[g].1 {
            quota[g] += 1;
            assigned += 1;
        }
    }

    let mut master = Xoshiro256PlusPlus::seed_from_u64(data.seed);
    let mut seen = vec![0usize; groups.len()];
    let mut plan = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let distance = distance_of(i);
        let g = groups.iter().position(|(key, _)| *key == (class, distance)).expect("group exists");
        let split = if seen[g] < quota[g] { Split::Train } else { Split::Test };
        seen[g] += 1;

        let seed = master.next_u64();
        let mut spec = ClipSpec::new(input_dims, class, (0, 0), distance, seed);
        spec.noise_sigma = data.noise_sigma;
        spec.num_distractors = data.num_distractors;
        let [l, r, t, b] = spec.required_margins();
        let (w, h) = (spec.width as i64, spec.height as i64);
        if l + r > w || t + b > h {
            return Err(config_err(format!(
                "a {w}x{h} frame is too small for class {class} ({}) at {distance} distance",
                GESTURE_NAMES[class]
            )));
        }
        spec.anchor = (master.random_range(l..=w - r), master.random_range(t..=h - b));
        plan.push((spec, split));
    }
    Ok(plan)
}

fn clip_file(id: usize) -> String {
    format!("{CLIPS_DIR}/clip_{id:05}.dgrt")
}

/// Writes a dataset to `out_dir`: `clips/*.dgrt` plus `manifest.json`.
///
/// A non-empty `out_dir` is refused unless `force` is set, in which case the
/// previous `clips/` directory and manifest are removed first.
pub fn generate_dataset(out_dir: &Path, input_dims: [usize; 4], data: &DataConfig, force: bool) -> Result<Manifest> {
    let plan = plan_dataset(input_dims, data)?;
    let non_empty = out_dir.is_dir()
        && std::fs::read_dir(out_dir).map_err(io_err(format!("reading {}", out_dir.display())))?.next().is_some();
    if non_empty {
        if !force {
            return Err(Error::Data(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out_dir.display()
            )));
        }
        let clips = out_dir.join(CLIPS_DIR);
        if clips.exists() {
            std::fs::remove_dir_all(&clips).map_err(io_err(format!("removing {}", clips.display())))?;
        }
        let manifest = out_dir.join(MANIFEST_FILE);
        if manifest.exists() {
            std::fs::remove_file(&manifest).map_err(io_err(format!("removing {}", manifest.display())))?;
        }
    }
    let clips_dir = out_dir.join(CLIPS_DIR);
    std::fs::create_dir_all(&clips_dir).map_err(io_err(format!("creating {}", clips_dir.display())))?;

    let results = parallel::map_indexed(plan.len(), parallel::worker_threads(), |i| -> Result<Vec<BBox>> {
        let (clip, bboxes) = generate_clip(&plan[i].0)?;
        let path = out_dir.join(clip_file(i));
        std::fs::write(&path, serialize::encode(&clip)).map_err(io_err(format!("writing {}", path.display())))?;
        Ok(bboxes)
    });
    let mut clips = Vec::with_capacity(plan.len());
    for (i, ((spec, split), bboxes)) in plan.iter().zip(results).enumerate() {
        clips.push(ClipRecord {
            id: i,
            file: clip_file(i),
            gesture_class: spec.gesture_class,
            distance_tag: spec.distance,
            split: *split,
            bboxes: bboxes?,
        });
    }
    let manifest =
        Manifest { format_version: MANIFEST_VERSION, input_dims, num_classes: data.num_classes, seed: data.seed, clips };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(io_err(format!("writing {}", path.display())))?;
    Ok(manifest)
}

fn from_tensor_error(e: TensorError) -> Error {
    match e {
        TensorError::Format { offset, message } => Error::Format { offset, message },
        other => Error::Tensor(other),
    }
}

/// Parses a clip file: the tensor encoding with rank 4 `(C, T, H, W)` and
/// 32-bit values.
pub fn decode_clip(bytes: &[u8]) -> Result<Tensor<f32>> {
    let header = serialize::read_header(bytes, 0).map_err(from_tensor_error)?;
    if header.dims.len() != 4 {
        return Err(Error::Format {
            offset: 9,
            message: format!("expected rank 4 (C, T, H, W), got rank {}", header.dims.len()),
        });
    }
    if header.dtype != DType::F32 {
        return Err(Error::Format { offset: 8, message: format!("expected 32-bit values, got {:?}", header.dtype) });
    }
    serialize::decode::<f32>(bytes).map_err(from_tensor_error)
}

pub fn load_clip(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    decode_clip(&bytes)
}

/// A clip with its annotations.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[C, T, H, W]`
    pub clip: Tensor<f32>,
    pub gesture_class: usize,
    pub distance: Distance,
    pub bboxes: Vec<BBox>,
}

/// A generated dataset on disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    /// Reads and validates `root/manifest.json`.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
        manifest.validate(Some(root))?;
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn records(&self, split: Split) -> Vec<&ClipRecord> {
        self.manifest.split(split).collect()
    }

    /// Cheap preflight: decodes the first clip in full and checks that every
    /// other clip file has the same byte length.
    pub fn check_files(&self) -> Result<()> {
        let Some(first) = self.manifest.clips.first() else {
            return Err(Error::Data(format!("dataset {} has no clips", self.root.display())));
        };
        self.load(first)?;
        let size = |r: &ClipRecord| {
            let path = self.root.join(&r.file);
            std::fs::metadata(&path).map(|m| m.len()).map_err(io_err(format!("reading {}", path.display())))
        };
        let expected = size(first)?;
        for r in &self.manifest.clips {
            let got = size(r)?;
            if got != expected {
                return Err(Error::Data(format!(
                    "clip file {} is {got} bytes, expected {expected}",
                    self.root.join(&r.file).display()
                )));
            }
        }
        Ok(())
    }

    pub fn load(&self, record: &ClipRecord) -> Result<Sample> {
        let clip = load_clip(&self.root.join(&record.file))?;
        let [t, c, h, w] = self.manifest.input_dims;
        if clip.shape() != [c, t, h, w] {
            return Err(Error::Data(format!(
                "clip {} has shape {:?}, manifest says [{c}, {t}, {h}, {w}]",
                record.id,
                clip.shape()
            )));
        }
        Ok(Sample {
            clip,
            gesture_class: record.gesture_class,
            distance: record.distance_tag,
            bboxes: record.bboxes.clone(),
        })
    }
}

/// Per-frame descriptors of the annotated blob: centre displacement and
/// size relative to frame 0 (in units of the initial size), and the mean
/// intensity of the bbox crop relative to its maximum over frames.
pub fn oracle_features(clip: &Tensor<f32>, bboxes: &[BBox]) -> Vec<f64> {
    let [c_n, _, h, w]: [usize; 4] = clip.shape().try_into().expect("rank-4 clip");
    let data = clip.data();
    let means: Vec<f64> = bboxes
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let b = b.clipped(w as i64, h as i64);
            if b.is_empty() {
                return 0.0;
            }
            let mut sum = 0.0;
            for c in 0..c_n {
                for y in b.y..b.y + b.h {
                    let row = ((c * bboxes.len() + t) * h + y as usize) * w;
                    sum += data[row + b.x as usize..row + (b.x + b.w) as usize].iter().map(|&v| f64::from(v)).sum::<f64>();
                }
            }
            sum / (c_n as f64 * b.area() as f64)
        })
        .collect();
    let peak = means.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let centre = |b: &BBox| (b.x as f64 + b.w as f64 / 2.0, b.y as f64 + b.h as f64 / 2.0);
    let (cx0, cy0) = centre(&bboxes[0]);
    let s0 = (bboxes[0].area() as f64).sqrt().max(1.0);
    let mut f = Vec::with_capacity(4 * bboxes.len());
    for (b, m) in bboxes.iter().zip(&means) {
        let (cx, cy) = centre(b);
        f.extend([(cx - cx0) / s0, (cy - cy0) / s0, (b.area() as f64).sqrt() / s0, m / peak]);
    }
    f
}

/// Nearest-centroid classifier over [`oracle_features`].
#[derive(Clone, Debug)]
pub struct NearestCentroid {
    centroids: Vec<Option<Vec<f64>>>,
}

impl NearestCentroid {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Self {
        let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; num_classes];
        for (f, &y) in features.iter().zip(labels) {
            let (s, n) = sums[y].get_or_insert_with(|| (vec![0.0; f.len()], 0));
            s.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            *n += 1;
        }
        let centroids = sums.into_iter().map(|e| e.map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())).collect();
        NearestCentroid { centroids }
    }

    pub fn predict(&self, f: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, c) in self.centroids.iter().enumerate() {
            if let Some(c) = c {
                let d: f64 = c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
        }
        best.1
    }
}

/// Test accuracy of a nearest-centroid classifier fit on the train split.
pub fn nearest_centroid_accuracy(dataset: &Dataset) -> Result<f64> {
    let featurize = |split| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in dataset.records(split) {
            let s = dataset.load(r)?;
            xs.push(oracle_features(&s.clip, &s.bboxes));
            ys.push(s.gesture_class);
        }
        Ok((xs, ys))
    };
    let (train_x, train_y) = featurize(Split::Train)?;
    let (test_x, test_y) = featurize(Split::Test)?;
    if test_x.is_empty() || train_x.is_empty() {
        return Err(Error::Data("nearest-centroid oracle needs non-empty train and test splits".into()));
    }
    let model = NearestCentroid::fit(&train_x, &train_y, dataset.manifest().num_classes);
    let correct = test_x.iter().zip(&test_y).filter(|(x, &y)| model.predict(x) == y).count();
    Ok(correct as f64 / test_x.len() as f64)
}
