use crate::element::Element;
use crate::error::{config_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::ops::conv::conv_out_dim;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool3dGeometry {
    pub batch: usize,
    pub channels: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

impl Pool3dGeometry {
    pub fn new(input: &[usize], kernel: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        if input.len() != 5 {
            return Err(config_err(format!("avgpool3d input must be rank 5, got {input:?}")));
        }
        let in_dims = [input[2], input[3], input[4]];
        let mut out_dims = [0; 3];
        for a in 0..3 {
            if kernel[a] == 0 || stride[a] == 0 {
                return Err(config_err("avgpool3d kernel and stride must be >= 1"));
            }
            out_dims[a] = conv_out_dim(in_dims[a], kernel[a], stride[a], 0).ok_or_else(|| {
                config_err(format!(
                    "avgpool3d dim {a}: kernel {} larger than input {}",
                    kernel[a], in_dims[a]
                ))
            })?;
        }
        Ok(Pool3dGeometry { batch: input[0], channels: input[1], in_dims, out_dims, kernel, stride })
    }

    pub fn window(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_cells(&self) -> usize {
        self.out_dims.iter().product()
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.channels * self.out_cells() * self.window()) as u64
    }

    /// Calls `f(out_index, in_index)` for every window element.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [td, hd, wd] = self.in_dims;
        let [to, ho, wo] = self.out_dims;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let in_cells = td * hd * wd;
        for plane in 0..self.batch * self.channels {
            let ib = plane * in_cells;
            let ob = plane * to * ho * wo;
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let o = ob + (ot * ho + oh) * wo + ow;
                        for a in 0..kt {
                            for b in 0..kh {
                                let row = ib + ((ot * st + a) * hd + oh * sh + b) * wd + ow * sw;
                                for c in 0..kw {
                                    f(o, row + c);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Graph<T> {
    /// Average pooling without padding.
    pub fn avgpool3d(&mut self, input: Var, kernel: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let geom = Pool3dGeometry::new(self.shape(input), kernel, stride)?;
        let x = self.value(input).data();
        let mut out = vec![T::zero(); geom.batch * geom.channels * geom.out_cells()];
        geom.for_each_tap(|o, i| out[o] += x[i]);
        let inv = T::one() / T::from_usize(geom.window()).unwrap();
        out.iter_mut().for_each(|v| *v *= inv);
        self.record_macs("avgpool3d", geom.macs());
        let shape = vec![geom.batch, geom.channels, geom.out_dims[0], geom.out_dims[1], geom.out_dims[2]];
        let rg = self.requires_grad(input);
        Ok(self.push_node(Tensor::from_parts(shape, out), Op::AvgPool3d { input, geom }, rg))
    }

    /// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 3 {
            return Err(config_err(format!("global_avg_pool needs rank >= 3, got {shape:?}")));
        }
        let cells: usize = shape[2..].iter().product();
        let inv = T::one() / T::from_usize(cells).unwrap();
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(cells)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        self.record_macs("global_avg_pool", (shape[0] * shape[1] * cells) as u64);
        let rg = self.requires_grad(input);
        Ok(self.push_node(Tensor::from_parts(vec![shape[0], shape[1]], out), Op::GlobalAvgPool { input }, rg))
    }
}

pub(crate) fn avgpool3d_backward<T: Element>(geom: &Pool3dGeometry, out_grad: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); geom.batch * geom.channels * geom.in_dims.iter().product::<usize>()];
    let inv = T::one() / T::from_usize(geom.window()).unwrap();
    geom.for_each_tap(|o, i| dx[i] += out_grad[o] * inv);
    dx
}

pub(crate) fn global_avg_pool_backward<T: Element>(in_shape: &[usize], out_grad: &[T]) -> Vec<T> {
    let cells: usize = in_shape[2..].iter().product();
    let inv = T::one() / T::from_usize(cells).unwrap();
    out_grad.iter().flat_map(|&g| std::iter::repeat_n(g * inv, cells)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;

    #[test]
    fn pairwise_means() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_f64(&[1, 1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.avgpool3d(x, [1, 1, 2], [1, 1, 2]).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 3.5]);
    }

    #[test]
    fn cube_mean_of_one_to_eight() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        let x = g.input(Tensor::from_f64(&[1, 1, 2, 2, 2], &v).unwrap());
        let y = g.avgpool3d(x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert_eq!(g.value(y).data(), &[4.5]);
        assert_eq!(g.flops().total_macs(), 8);
    }

    #[test]
    fn constant_input_stays_constant() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::full(&[2, 3, 4, 5, 6], 0.7));
        let y = g.avgpool3d(x, [2, 3, 2], [1, 2, 3]).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 3, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::zeros(&[1, 1, 2, 2, 2]));
        assert!(g.avgpool3d(x, [3, 1, 1], [1, 1, 1]).is_err());
    }
}
