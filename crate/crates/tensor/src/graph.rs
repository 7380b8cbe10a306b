//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape. Nodes are
//! created in topological order, so the backward pass is a single reverse sweep.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::flops::FlopCounter;
use crate::ops::conv::Conv3dGeometry;
use crate::ops::pool::Pool3dGeometry;
use crate::param::{ParamId, ParamStore, StatUpdate};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Batch-norm behaviour for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and record running-stat updates.
    Train,
    /// Normalize with stored running statistics.
    Eval,
}

pub(crate) enum Op<T> {
    Input,
    Leaf,
    Param(ParamId),
    Conv3d { input: Var, weight: Var, bias: Option<Var>, geom: Conv3dGeometry },
    AvgPool3d { input: Var, geom: Pool3dGeometry },
    GlobalAvgPool { input: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu { input: Var },
    Sigmoid { input: Var },
    Softmax { input: Var },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Add { a: Var, b: Var },
    AddScaled { a: Var, b: Var, factor: T },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    Reshape { input: Var },
    Patchify { input: Var, grid: (usize, usize) },
    GatherRows { input: Var, indices: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceWithLogits { logits: Var, labels: Vec<T>, probs: Vec<T> },
    Bce { scores: Var, labels: Vec<T> },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// A recorded forward computation.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
    flops: FlopCounter,
    scopes: Vec<String>,
    pub(crate) stat_updates: Vec<StatUpdate<T>>,
}

/// Gradients of a scalar with respect to the leaves of a graph.
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for a leaf or parameter node, if it was reached.
    pub fn get(&self, graph: &Graph<T>, v: Var) -> Option<Tensor<T>> {
        let data = self.leaves.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(graph.nodes[v.0].value.shape().to_vec(), data.clone()))
    }

    /// Adds every parameter gradient into the store's gradient slots.
    pub fn accumulate_into(&self, graph: &Graph<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(Some(g)) = self.leaves.get(i) {
                    store.accumulate_grad(id, g)?;
                }
            }
        }
        Ok(())
    }
}

impl<T: Element> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            flops: FlopCounter::new(),
            scopes: Vec::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    pub fn stat_updates(&self) -> &[StatUpdate<T>] {
        &self.stat_updates
    }

    /// Labels subsequent MAC records with `scope/` until the matching [`Graph::pop_scope`].
    pub fn push_scope(&mut self, scope: &str) {
        self.scopes.push(scope.to_string());
    }

    pub fn pop_scope(&mut self) {
        self.scopes.pop();
    }

    pub(crate) fn record_macs(&mut self, op: &str, macs: u64) {
        let label = if self.scopes.is_empty() {
            op.to_string()
        } else {
            format!("{}/{}", self.scopes.join("/"), op)
        };
        self.flops.record(label, macs);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Input, false)
    }

    /// A free leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push_node(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub(crate) fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(TensorError::Graph(format!(
                "backward requires a scalar loss, got {numel} elements"
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        let mut leaves: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        leaves.resize_with(loss.0 + 1, || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { leaves });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(out_grad) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Input => continue,
                Op::Leaf | Op::Param(_) => {
                    leaves[i] = Some(out_grad);
                    continue;
                }
                _ => {}
            }
            for (input, g) in crate::ops::backward(self, i, &out_grad) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { leaves })
    }

    /// Runs backward and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(self, store)
    }
}
