//! Differentiable operations. Forward passes are `Graph` methods defined in
//! the submodules; [`backward`] routes a node's output gradient to its inputs.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;

use crate::element::Element;
use crate::graph::{Graph, Op, Var};

/// Gradient contributions of node `index` to each of its inputs.
pub(crate) fn backward<T: Element>(graph: &Graph<T>, index: usize, out_grad: &[T]) -> Vec<(Var, Vec<T>)> {
    let node = &graph.nodes[index];
    match &node.op {
        Op::Input | Op::Leaf | Op::Param(_) => Vec::new(),
        Op::Conv3d { input, weight, bias, geom } => {
            conv::conv3d_backward(graph, *input, *weight, *bias, geom, out_grad)
        }
        Op::AvgPool3d { input, geom } => vec![(*input, pool::avgpool3d_backward(geom, out_grad))],
        Op::GlobalAvgPool { input } => {
            vec![(*input, pool::global_avg_pool_backward(graph.shape(*input), out_grad))]
        }
        Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
            norm::batchnorm_backward(graph, *input, *gamma, *beta, xhat, inv_std, *train, out_grad)
        }
        Op::Relu { input } => vec![(*input, activation::relu_backward(graph.value(*input).data(), out_grad))],
        Op::Sigmoid { input } => vec![(*input, activation::sigmoid_backward(node.value.data(), out_grad))],
        Op::Softmax { input } => {
            let k = *node.value.shape().last().unwrap();
            vec![(*input, activation::softmax_backward(node.value.data(), k, out_grad))]
        }
        Op::Linear { input, weight, bias } => linear::linear_backward(graph, *input, *weight, *bias, out_grad),
        Op::Add { a, b } => vec![(*a, out_grad.to_vec()), (*b, out_grad.to_vec())],
        Op::AddScaled { a, b, factor } => {
            vec![(*a, out_grad.to_vec()), (*b, out_grad.iter().map(|&g| g * *factor).collect())]
        }
        Op::Mul { a, b } => {
            let av = graph.value(*a).data();
            let bv = graph.value(*b).data();
            vec![
                (*a, out_grad.iter().zip(bv).map(|(&g, &y)| g * y).collect()),
                (*b, out_grad.iter().zip(av).map(|(&g, &x)| g * x).collect()),
            ]
        }
        Op::Scale { input, factor } => vec![(*input, out_grad.iter().map(|&g| g * *factor).collect())],
        Op::Sum { input } => vec![(*input, vec![out_grad[0]; graph.value(*input).numel()])],
        Op::Reshape { input } => vec![(*input, out_grad.to_vec())],
        Op::Patchify { input, grid } => {
            vec![(*input, shape::patchify_backward(graph.shape(*input), *grid, out_grad))]
        }
        Op::GatherRows { input, indices } => {
            vec![(*input, shape::gather_rows_backward(graph.shape(*input), indices, out_grad))]
        }
        Op::CrossEntropy { logits, targets, probs } => {
            vec![(*logits, loss::cross_entropy_backward(probs, targets, out_grad[0]))]
        }
        Op::BceWithLogits { logits, labels, probs } => {
            let rows = graph.shape(*logits)[0];
            vec![(*logits, loss::bce_with_logits_backward(probs, labels, rows, out_grad[0]))]
        }
        Op::Bce { scores, labels } => {
            let rows = graph.shape(*scores)[0];
            vec![(*scores, loss::bce_backward(graph.value(*scores).data(), labels, rows, out_grad[0]))]
        }
    }
}
