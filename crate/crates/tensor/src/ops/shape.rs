//! Elementwise arithmetic, reductions and layout operations.

use crate::element::Element;
use crate::error::{config_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Index arithmetic shared by the forward and backward passes of `patchify`.
///
/// Calls `f(patch_offset, feature_offset, len)` for every contiguous row segment.
pub(crate) fn for_each_patch_row(shape: &[usize], grid: (usize, usize), mut f: impl FnMut(usize, usize, usize)) {
    let (batch, c, t, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    let (m, n) = grid;
    let (ph, pw) = (h / m, w / n);
    let patch_len = c * t * ph * pw;
    for s in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let p = (s * m + i) * n + j;
                for ch in 0..c {
                    for tt in 0..t {
                        for y in 0..ph {
                            let dst = p * patch_len + ((ch * t + tt) * ph + y) * pw;
                            let src = (((s * c + ch) * t + tt) * h + i * ph + y) * w + j * pw;
                            f(dst, src, pw);
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    /// `a + factor * b`.
    pub fn add_scaled(&mut self, a: Var, b: Var, factor: T) -> Result<Var> {
        self.binary(a, b, "add_scaled", |x, y| x + factor * y, Op::AddScaled { a, b, factor })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(config_err(format!(
                "{name} shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push_node(value, op, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.requires_grad(input);
        self.push_node(value, Op::Scale { input, factor }, rg)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.requires_grad(input);
        self.push_node(value, Op::Sum { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.requires_grad(input);
        Ok(self.push_node(value, Op::Reshape { input }, rg))
    }

    /// Splits `[N, C, T, H, W]` into an `m x n` grid of spatial patches,
    /// returned as `[N*m*n, C, T, H/m, W/n]` with patches in row-major order
    /// inside each sample.
    pub fn patchify(&mut self, input: Var, grid: (usize, usize)) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 5 {
            return Err(config_err(format!("patchify needs [N,C,T,H,W], got {shape:?}")));
        }
        let (m, n) = grid;
        if m == 0 || n == 0 || shape[3] % m != 0 || shape[4] % n != 0 {
            return Err(config_err(format!(
                "grid {m}x{n} does not evenly divide feature map {}x{}",
                shape[3], shape[4]
            )));
        }
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for_each_patch_row(&shape, grid, |dst, src, len| {
            out[dst..dst + len].copy_from_slice(&x[src..src + len]);
        });
        let out_shape = vec![shape[0] * m * n, shape[1], shape[2], shape[3] / m, shape[4] / n];
        let rg = self.requires_grad(input);
        Ok(self.push_node(Tensor::from_parts(out_shape, out), Op::Patchify { input, grid }, rg))
    }

    /// Picks rows of the leading axis: `out[k] = input[indices[k]]`.
    pub fn gather_rows(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(config_err("gather_rows needs rank >= 2"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(config_err(format!("gather index {bad} out of range for {} rows", shape[0])));
        }
        if indices.is_empty() {
            return Err(config_err("gather_rows with no indices"));
        }
        let inner: usize = shape[1..].iter().product();
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&x[i * inner..(i + 1) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = indices.len();
        let rg = self.requires_grad(input);
        let op = Op::GatherRows { input, indices: indices.to_vec() };
        Ok(self.push_node(Tensor::from_parts(out_shape, out), op, rg))
    }
}

pub(crate) fn patchify_backward<T: Element>(in_shape: &[usize], grid: (usize, usize), out_grad: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); out_grad.len()];
    for_each_patch_row(in_shape, grid, |dst, src, len| {
        dx[src..src + len].copy_from_slice(&out_grad[dst..dst + len]);
    });
    dx
}

pub(crate) fn gather_rows_backward<T: Element>(in_shape: &[usize], indices: &[usize], out_grad: &[T]) -> Vec<T> {
    let inner: usize = in_shape[1..].iter().product();
    let mut dx = vec![T::zero(); in_shape[0] * inner];
    for (k, &i) in indices.iter().enumerate() {
        for (d, &g) in dx[i * inner..(i + 1) * inner].iter_mut().zip(&out_grad[k * inner..(k + 1) * inner]) {
            *d += g;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;

    #[test]
    fn patchify_two_by_three_of_ramp() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let v: Vec<f64> = (0..24).map(f64::from).collect();
        let x = g.input(Tensor::from_f64(&[1, 1, 1, 4, 6], &v).unwrap());
        let p = g.patchify(x, (2, 3)).unwrap();
        assert_eq!(g.shape(p), &[6, 1, 1, 2, 2]);
        let d = g.value(p).data();
        assert_eq!(&d[0..4], &[0.0, 1.0, 6.0, 7.0]);
        assert_eq!(&d[20..24], &[16.0, 17.0, 22.0, 23.0]);
    }

    #[test]
    fn patchify_rejects_uneven_grid() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::zeros(&[1, 1, 1, 56, 56]));
        assert!(g.patchify(x, (2, 3)).is_err());
    }

    #[test]
    fn gather_picks_rows() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_f64(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let y = g.gather_rows(x, &[2, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 5.0, 0.0, 1.0]);
        assert!(g.gather_rows(x, &[3]).is_err());
    }
}
