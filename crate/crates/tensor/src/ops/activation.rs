use crate::element::Element;
use crate::error::{config_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax of a row-major buffer with rows of length `k`.
pub(crate) fn softmax_rows<T: Element>(x: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, dst) in x.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / total);
    }
    out
}

impl<T: Element> Graph<T> {
    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.requires_grad(input);
        self.push_node(value, Op::Relu { input }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid_scalar);
        let rg = self.requires_grad(input);
        self.push_node(value, Op::Sigmoid { input }, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let k = *shape.last().ok_or_else(|| config_err("softmax of a rank-0 tensor"))?;
        let out = softmax_rows(self.value(input).data(), k);
        let rg = self.requires_grad(input);
        Ok(self.push_node(Tensor::from_parts(shape, out), Op::Softmax { input }, rg))
    }
}

pub(crate) fn relu_backward<T: Element>(x: &[T], out_grad: &[T]) -> Vec<T> {
    x.iter().zip(out_grad).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect()
}

pub(crate) fn sigmoid_backward<T: Element>(y: &[T], out_grad: &[T]) -> Vec<T> {
    y.iter().zip(out_grad).map(|(&s, &g)| g * s * (T::one() - s)).collect()
}

pub(crate) fn softmax_backward<T: Element>(y: &[T], k: usize, out_grad: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, gr), dr) in y.chunks(k).zip(out_grad.chunks(k)).zip(dx.chunks_mut(k)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &s), &g) in dr.iter_mut().zip(yr).zip(gr) {
            *d = s * (g - dot);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let x = g.input(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::<f32>::new(Mode::Eval);
        let x = g.input(Tensor::from_f64(&[3], &[0.0, 40.0, -40.0]).unwrap());
        let y = g.sigmoid(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.5);
        assert!(v[1] <= 1.0 && v[2] >= 0.0 && v[2].is_finite());
    }

    #[test]
    fn softmax_of_log_weights() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_f64(&[1, 2], &[1f64.ln(), 3f64.ln()]).unwrap());
        let y = g.softmax(x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }
}
