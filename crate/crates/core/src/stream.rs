//! Sliding-window inference over a frame stream `[C, L, H, W]`.
//!
//! Windows are independent: each is classified from its own `T` frames only,
//! and its prediction is attributed to its last frame.

use std::io::Write;
use std::path::Path;

use dyngest_tensor::Tensor;

use crate::error::{config_err, io_err, Error, Result};
use crate::net::GestureNet;
use crate::parallel::{map_indexed, worker_threads};

/// `T / 2`, at least 1.
pub fn default_stride(window: usize) -> usize {
    (window / 2).max(1)
}

/// Half-open `(start, end)` frame ranges of every full window.
pub fn sliding_windows(len: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(config_err("stride must be at least 1"));
    }
    if window == 0 {
        return Err(config_err("window must be at least 1 frame"));
    }
    if len < window {
        return Err(config_err(format!("stream shorter than window ({len} < {window} frames)")));
    }
    Ok((0..=len - window).step_by(stride).map(|s| (s, s + window)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowPrediction {
    pub start: usize,
    pub end: usize,
    pub class: usize,
    pub probabilities: Vec<f64>,
    /// Selected patch `(i, j)`; absent for the static pipeline.
    pub selected: Option<(usize, usize)>,
    pub macs: u64,
}

impl WindowPrediction {
    /// Frame the prediction is attributed to.
    pub fn frame(&self) -> usize {
        self.end - 1
    }

    pub fn max_prob(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Copies frames `[start, start + t)` of every channel.
pub fn window_of(stream: &Tensor<f32>, start: usize, t: usize) -> Result<Tensor<f32>> {
    let &[c, l, h, w] = stream.shape() else {
        return Err(config_err(format!("stream must be [C, L, H, W], got {:?}", stream.shape())));
    };
    if start + t > l {
        return Err(config_err(format!("window [{start}, {}) exceeds {l} frames", start + t)));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(c * t * plane);
    for ch in 0..c {
        let base = (ch * l + start) * plane;
        data.extend_from_slice(&stream.data()[base..base + t * plane]);
    }
    Ok(Tensor::new(vec![c, t, h, w], data)?)
}

/// Frame-axis concatenation of `[C, L_i, H, W]` streams.
pub fn concat_streams(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = parts.first().ok_or_else(|| config_err("nothing to concatenate"))?;
    let &[c, _, h, w] = first.shape() else {
        return Err(config_err(format!("stream must be [C, L, H, W], got {:?}", first.shape())));
    };
    let mut total = 0;
    for p in parts {
        match p.shape() {
            &[pc, l, ph, pw] if (pc, ph, pw) == (c, h, w) => total += l,
            s => return Err(config_err(format!("cannot concatenate {s:?} onto [{c}, _, {h}, {w}]"))),
        }
    }
    let mut data = Vec::with_capacity(c * total * h * w);
    for ch in 0..c {
        for p in parts {
            let n = p.shape()[1] * h * w;
            data.extend_from_slice(&p.data()[ch * n..(ch + 1) * n]);
        }
    }
    Ok(Tensor::new(vec![c, total, h, w], data)?)
}

/// Classifies every window of `stream` in eval mode, `batch_size` windows
/// per forward pass, in window order.
pub fn infer_stream(
    model: &GestureNet<f32>,
    stream: &Tensor<f32>,
    stride: usize,
    batch_size: usize,
) -> Result<Vec<WindowPrediction>> {
    let [t, c, h, w] = model.config().input_dims;
    match stream.shape() {
        &[sc, _, sh, sw] if (sc, sh, sw) == (c, h, w) => {}
        s => {
            return Err(Error::Data(format!(
                "stream is {s:?} but the model expects [{c}, L, {h}, {w}] (channels, frames, height, width)"
            )))
        }
    }
    let windows = sliding_windows(stream.shape()[1], t, stride)?;
    let chunks: Vec<&[(usize, usize)]> = windows.chunks(batch_size.max(1)).collect();
    let batches = map_indexed(chunks.len(), worker_threads(), |b| -> Result<Vec<WindowPrediction>> {
        let clips = chunks[b].iter().map(|&(s, _)| window_of(stream, s, t)).collect::<Result<Vec<_>>>()?;
        let (preds, flops) = model.predict(&Tensor::stack(&clips)?)?;
        let macs = flops.total() / clips.len() as u64;
        Ok(chunks[b]
            .iter()
            .zip(preds)
            .map(|(&(start, end), p)| WindowPrediction {
                start,
                end,
                class: p.class,
                selected: p.selected(),
                probabilities: p.probabilities,
                macs,
            })
            .collect())
    });
    let mut out = Vec::with_capacity(windows.len());
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

/// Writes the predictions as CSV after a `#` line recording the stride and
/// the frame-attribution rule.
pub fn write_predictions(out: &mut impl Write, predictions: &[WindowPrediction], window: usize, stride: usize) -> Result<()> {
    let ctx = || "writing predictions".to_string();
    writeln!(out, "# window={window} stride={stride} attribution=last_frame (end-1)").map_err(io_err(ctx()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_start", "window_end", "pred_class", "max_prob", "sel_i", "sel_j", "macs"])?;
    for p in predictions {
        let (i, j) = p.selected.map_or((String::new(), String::new()), |(i, j)| (i.to_string(), j.to_string()));
        w.write_record([
            p.start.to_string(),
            p.end.to_string(),
            p.class.to_string(),
            p.max_prob().to_string(),
            i,
            j,
            p.macs.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(ctx()))
}

pub fn save_predictions(path: &Path, predictions: &[WindowPrediction], window: usize, stride: usize) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(io_err(format!("creating {}", path.display())))?,
    );
    write_predictions(&mut f, predictions, window, stride)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_examples() {
        assert_eq!(sliding_windows(32, 16, 16).unwrap(), vec![(0, 16), (16, 32)]);
        assert_eq!(sliding_windows(16, 16, 1).unwrap(), vec![(0, 16)]);
        let starts: Vec<usize> = sliding_windows(20, 16, 2).unwrap().iter().map(|w| w.0).collect();
        assert_eq!(starts, vec![0, 2, 4]);
        let err = sliding_windows(15, 16, 8).unwrap_err().to_string();
        assert!(err.contains("stream shorter than window"), "{err}");
        assert!(sliding_windows(20, 16, 0).is_err());
        assert_eq!(default_stride(16), 8);
    }

    #[test]
    fn window_and_concat_invert() {
        let s = Tensor::<f32>::from_f64(&[2, 5, 2, 3], &(0..60).map(f64::from).collect::<Vec<_>>()).unwrap();
        let a = window_of(&s, 0, 2).unwrap();
        let b = window_of(&s, 2, 3).unwrap();
        assert_eq!(concat_streams(&[&a, &b]).unwrap(), s);
        assert_eq!(b.data()[0], 12.0);
    }
}
