use crate::element::Element;
use crate::error::{config_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::ops::activation::{sigmoid_scalar, softmax_rows};
use crate::tensor::Tensor;

/// Scores are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

fn clamp_score<T: Element>(s: T) -> T {
    let lo = T::from_f64_lossy(BCE_CLAMP);
    let hi = T::one() - lo;
    s.max(lo).min(hi)
}

fn bce_value<T: Element>(s: T, y: T) -> T {
    let s = clamp_score(s);
    -(y * s.ln() + (T::one() - y) * (T::one() - s).ln())
}

fn check_labels<T: Element>(labels: &[T], expected: usize) -> Result<()> {
    if labels.len() != expected {
        return Err(config_err(format!("expected {expected} labels, got {}", labels.len())));
    }
    if labels.iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(config_err("binary labels must be 0 or 1"));
    }
    Ok(())
}

impl<T: Element> Graph<T> {
    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(config_err(format!(
                "cross_entropy expects [N, K] logits with N targets, got {shape:?} and {} targets",
                targets.len()
            )));
        }
        let k = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(config_err(format!("target class {bad} out of range [0, {k})")));
        }
        let x = self.value(logits).data();
        let mut total = T::zero();
        for (row, &t) in x.chunks(k).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[t];
        }
        let n = T::from_usize(targets.len()).unwrap();
        let probs = softmax_rows(x, k);
        let rg = self.requires_grad(logits);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        Ok(self.push_node(Tensor::scalar(total / n), op, rg))
    }

    /// Binary cross-entropy of `sigmoid(logits)` against 0/1 labels, summed over
    /// each row and averaged over the leading axis.
    ///
    /// The value uses the clamped score; the gradient with respect to the logit
    /// is `sigmoid(logit) - label`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let n = self.shape(logits)[0];
        check_labels(labels, self.value(logits).numel())?;
        let probs: Vec<T> = self.value(logits).data().iter().map(|&l| sigmoid_scalar(l)).collect();
        let total: T = probs.iter().zip(labels).map(|(&s, &y)| bce_value(s, y)).sum();
        let rg = self.requires_grad(logits);
        let op = Op::BceWithLogits { logits, labels: labels.to_vec(), probs };
        Ok(self.push_node(Tensor::scalar(total / T::from_usize(n).unwrap()), op, rg))
    }

    /// Binary cross-entropy on probabilities, same reduction as [`Graph::bce_with_logits`].
    pub fn binary_cross_entropy(&mut self, scores: Var, labels: &[T]) -> Result<Var> {
        let n = self.shape(scores)[0];
        check_labels(labels, self.value(scores).numel())?;
        let total: T = self.value(scores).data().iter().zip(labels).map(|(&s, &y)| bce_value(s, y)).sum();
        let rg = self.requires_grad(scores);
        let op = Op::Bce { scores, labels: labels.to_vec() };
        Ok(self.push_node(Tensor::scalar(total / T::from_usize(n).unwrap()), op, rg))
    }
}

pub(crate) fn cross_entropy_backward<T: Element>(probs: &[T], targets: &[usize], g: T) -> Vec<T> {
    let k = probs.len() / targets.len();
    let scale = g / T::from_usize(targets.len()).unwrap();
    let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (r, &t) in targets.iter().enumerate() {
        dx[r * k + t] -= scale;
    }
    dx
}

pub(crate) fn bce_with_logits_backward<T: Element>(probs: &[T], labels: &[T], rows: usize, g: T) -> Vec<T> {
    let scale = g / T::from_usize(rows).unwrap();
    probs.iter().zip(labels).map(|(&s, &y)| (s - y) * scale).collect()
}

pub(crate) fn bce_backward<T: Element>(scores: &[T], labels: &[T], rows: usize, g: T) -> Vec<T> {
    let scale = g / T::from_usize(rows).unwrap();
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let c = clamp_score(s);
            if c != s {
                T::zero()
            } else {
                (s - y) / (s * (T::one() - s)) * scale
            }
        })
        .collect()
}
