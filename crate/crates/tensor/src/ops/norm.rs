use crate::element::Element;
use crate::error::{config_err, Result, TensorError};
use crate::graph::{Graph, Mode, Op, Var};
use crate::param::{ParamStore, StatUpdate, StatsId};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

const LANES: usize = 16;

/// `Σ f(i)` over `0..len` with `LANES` independent partial sums, so the
/// reduction vectorizes; the summation order is fixed, hence deterministic.
#[inline(always)]
fn lane_sum<T: Element>(len: usize, f: impl Fn(usize) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let full = len / LANES * LANES;
    for base in (0..full).step_by(LANES) {
        for (l, a) in acc.iter_mut().enumerate() {
            *a += f(base + l);
        }
    }
    let mut tail = T::zero();
    for i in full..len {
        tail += f(i);
    }
    acc.iter().fold(tail, |s, &a| s + a)
}

impl<T: Element> Graph<T> {
    /// Per-channel batch normalization over `[N, C, ...]`.
    ///
    /// Train mode normalizes with the batch statistics and queues a running-stat
    /// update (see [`ParamStore::commit_stats`]); eval mode uses the stored
    /// running statistics.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        store: &ParamStore<T>,
        stats: StatsId,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(config_err(format!("batchnorm input must be at least rank 2, got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let cells: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(config_err(format!(
                "batchnorm affine shapes {:?}/{:?} do not match C={c}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let eps = T::from_f64_lossy(BN_EPS);
        let x = self.value(input).data();
        let train = self.mode() == Mode::Train;
        let mut pending = None;
        let (mean, var) = if train {
            let m = n * cells;
            if m < 2 {
                return Err(config_err(format!(
                    "batchnorm in train mode needs at least 2 values per channel, got {m}"
                )));
            }
            let mf = T::from_usize(m).unwrap();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for s_i in 0..n {
                    let xs = &x[(s_i * c + ch) * cells..][..cells];
                    s += lane_sum(cells, |i| xs[i]);
                }
                let mu = s / mf;
                let mut v = T::zero();
                for s_i in 0..n {
                    let xs = &x[(s_i * c + ch) * cells..][..cells];
                    v += lane_sum(cells, |i| {
                        let d = xs[i] - mu;
                        d * d
                    });
                }
                mean[ch] = mu;
                var[ch] = v / mf;
            }
            let unbiased = var.iter().map(|&v| v * mf / T::from_usize(m - 1).unwrap()).collect();
            pending = Some(StatUpdate { stats, batch_mean: mean.clone(), batch_var_unbiased: unbiased });
            (mean, var)
        } else {
            let rs = store.stats(stats);
            if !rs.initialized {
                return Err(TensorError::UninitializedStats(rs.name.clone()));
            }
            (rs.mean.clone(), rs.var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s_i in 0..n {
            for ch in 0..c {
                let off = (s_i * c + ch) * cells;
                for i in off..off + cells {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + b[ch];
                }
            }
        }
        let macs = x.len() as u64;
        self.stat_updates.extend(pending);
        self.record_macs("batchnorm", macs);
        let rg = self.any_grad(&[input, gamma, beta]);
        let op = Op::BatchNorm { input, gamma, beta, xhat, inv_std, train };
        Ok(self.push_node(Tensor::from_parts(shape, out), op, rg))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward<T: Element>(
    graph: &Graph<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    out_grad: &[T],
) -> Vec<(Var, Vec<T>)> {
    let shape = graph.shape(input);
    let (n, c) = (shape[0], shape[1]);
    let cells: usize = shape[2..].iter().product();
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let (dy, xh) = (&out_grad[(s * c + ch) * cells..][..cells], &xhat[(s * c + ch) * cells..][..cells]);
            sum_dy[ch] += lane_sum(cells, |i| dy[i]);
            sum_dy_xhat[ch] += lane_sum(cells, |i| dy[i] * xh[i]);
        }
    }
    let mut result = Vec::new();
    if graph.requires_grad(input) {
        let g = graph.value(gamma).data();
        let mut dx = vec![T::zero(); out_grad.len()];
        let m = T::from_usize(n * cells).unwrap();
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * cells;
                if train {
                    let k = g[ch] * inv_std[ch] / m;
                    for i in off..off + cells {
                        dx[i] = k * (m * out_grad[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                    }
                } else {
                    let k = g[ch] * inv_std[ch];
                    for i in off..off + cells {
                        dx[i] = k * out_grad[i];
                    }
                }
            }
        }
        result.push((input, dx));
    }
    if graph.requires_grad(gamma) {
        result.push((gamma, sum_dy_xhat));
    }
    if graph.requires_grad(beta) {
        result.push((beta, sum_dy));
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(c: usize) -> (ParamStore<f64>, StatsId) {
        let mut store = ParamStore::new();
        let id = store.add_stats("bn", c);
        (store, id)
    }

    #[test]
    fn normalizes_channel_values() {
        let (store, id) = setup(1);
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::from_f64(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let gamma = g.input(Tensor::ones(&[1]));
        let beta = g.input(Tensor::zeros(&[1]));
        let y = g.batchnorm(x, gamma, beta, &store, id).unwrap();
        let want = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        let exact = (1.0 - 2.5) / (1.25f64 + 1e-5).sqrt();
        assert!((g.value(y).data()[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let (store, id) = setup(2);
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::from_f64(&[2, 2, 2], &[3.0, -1.0, 2.0, 7.0, 0.5, 0.1, 9.0, 4.0]).unwrap());
        let gamma = g.input(Tensor::zeros(&[2]));
        let beta = g.input(Tensor::from_f64(&[2], &[0.25, -3.0]).unwrap());
        let y = g.batchnorm(x, gamma, beta, &store, id).unwrap();
        let v = g.value(y).data();
        for s in 0..2 {
            assert_eq!(&v[s * 4..s * 4 + 2], &[0.25, 0.25]);
            assert_eq!(&v[s * 4 + 2..s * 4 + 4], &[-3.0, -3.0]);
        }
    }

    #[test]
    fn already_normalized_input_passes_through() {
        let (store, id) = setup(1);
        let mut g = Graph::<f64>::new(Mode::Train);
        let vals = [-1.0, 1.0, -1.0, 1.0];
        let x = g.input(Tensor::from_f64(&[1, 1, 4], &vals).unwrap());
        let gamma = g.input(Tensor::ones(&[1]));
        let beta = g.input(Tensor::zeros(&[1]));
        let y = g.batchnorm(x, gamma, beta, &store, id).unwrap();
        for (a, b) in g.value(y).data().iter().zip(vals) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_before_any_update_is_an_error() {
        let (store, id) = setup(1);
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::zeros(&[1, 1, 4]));
        let gamma = g.input(Tensor::ones(&[1]));
        let beta = g.input(Tensor::zeros(&[1]));
        let err = g.batchnorm(x, gamma, beta, &store, id).unwrap_err();
        assert!(err.to_string().contains("uninitialized running statistics"));
    }

    #[test]
    fn eval_uses_committed_running_stats() {
        let (mut store, id) = setup(1);
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::from_f64(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let gamma = g.input(Tensor::ones(&[1]));
        let beta = g.input(Tensor::zeros(&[1]));
        g.batchnorm(x, gamma, beta, &store, id).unwrap();
        store.commit_stats(g.stat_updates());
        let st = store.stats(id);
        assert!((st.mean[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((st.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        let mut e = Graph::<f64>::new(Mode::Eval);
        let x = e.input(Tensor::from_f64(&[1, 1, 1], &[0.25]).unwrap());
        let gamma = e.input(Tensor::ones(&[1]));
        let beta = e.input(Tensor::zeros(&[1]));
        let y = e.batchnorm(x, gamma, beta, &store, id).unwrap();
        assert!(e.value(y).data()[0].abs() < 1e-12);
        assert!(e.stat_updates().is_empty());
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let (store, id) = setup(1);
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::zeros(&[1, 1, 1]));
        let gamma = g.input(Tensor::ones(&[1]));
        let beta = g.input(Tensor::zeros(&[1]));
        assert!(g.batchnorm(x, gamma, beta, &store, id).is_err());
    }
}
