use crate::element::{Element, MatRef};
use crate::error::{config_err, Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

impl<T: Element> Graph<T> {
    /// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(config_err(format!(
                "linear shape mismatch: input {xs:?} against weight {ws:?} (feature counts must match)"
            )));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(config_err(format!("linear bias shape {:?}, expected [{fout}]", self.shape(b))));
            }
        }
        if !self.value(input).is_finite() {
            return Err(TensorError::Numeric("linear input contains non-finite values".into()));
        }
        let mut out = vec![T::zero(); n * fout];
        T::gemm(
            T::one(),
            MatRef::new(self.value(input).data(), n, fin),
            MatRef::transposed(self.value(weight).data(), fout, fin),
            T::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
            }
        }
        self.record_macs("linear", (n * fin * fout) as u64);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push_node(Tensor::from_parts(vec![n, fout], out), Op::Linear { input, weight, bias }, rg))
    }
}

pub(crate) fn linear_backward<T: Element>(
    graph: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    out_grad: &[T],
) -> Vec<(Var, Vec<T>)> {
    let xs = graph.shape(input);
    let (n, fin) = (xs[0], xs[1]);
    let fout = graph.shape(weight)[0];
    let mut result = Vec::new();
    if graph.requires_grad(input) {
        let mut dx = vec![T::zero(); n * fin];
        T::gemm(
            T::one(),
            MatRef::new(out_grad, n, fout),
            MatRef::new(graph.value(weight).data(), fout, fin),
            T::zero(),
            &mut dx,
        );
        result.push((input, dx));
    }
    if graph.requires_grad(weight) {
        let mut dw = vec![T::zero(); fout * fin];
        T::gemm(
            T::one(),
            MatRef::transposed(out_grad, n, fout),
            MatRef::new(graph.value(input).data(), n, fin),
            T::zero(),
            &mut dw,
        );
        result.push((weight, dw));
    }
    if let Some(b) = bias {
        if graph.requires_grad(b) {
            let mut db = vec![T::zero(); fout];
            for row in out_grad.chunks(fout) {
                db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
            }
            result.push((b, db));
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;

    #[test]
    fn affine_map_and_macs() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let w = g.input(Tensor::from_f64(&[2, 3], &[1.0, 0.0, 0.0, 0.5, 0.5, 0.5]).unwrap());
        let b = g.input(Tensor::from_f64(&[2], &[10.0, 0.0]).unwrap());
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 3.0, 9.0, 0.0]);
        assert_eq!(g.flops().total_macs(), 12);
    }

    #[test]
    fn feature_mismatch_is_config_error() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::zeros(&[2, 3]));
        let w = g.input(Tensor::zeros(&[2, 4]));
        assert!(matches!(g.linear(x, w, None), Err(TensorError::Config(_))));
    }
}
