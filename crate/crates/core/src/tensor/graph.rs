use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::ConvOp;
use super::elementwise::{BinaryOp, UnaryKind};
use super::layout::{ConcatOp, GatherOp, IndexSelectOp, NarrowOp, PermuteOp};
use super::linalg::MatMulOp;
use super::reduce::{LayerNormOp, ReduceOp, SoftmaxOp};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Binary(BinaryOp),
    Unary { kind: UnaryKind, a: Var },
    Scale { a: Var, factor: f64 },
    MulConst { a: Var, factors: Vec<f64> },
    MatMul(MatMulOp),
    Softmax(SoftmaxOp),
    Reduce(ReduceOp),
    LayerNorm(LayerNormOp),
    Conv(ConvOp),
    Reshape { a: Var },
    Permute(PermuteOp),
    Concat(ConcatOp),
    Narrow(NarrowOp),
    Gather(GatherOp),
    IndexSelect(IndexSelectOp),
    MaskedFill { a: Var, mask: Vec<bool> },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
}

/// Gradient buffers for one backward sweep.
pub(crate) struct Adjoints<'a> {
    nodes: &'a [Node],
    bufs: Vec<Option<Vec<f64>>>,
}

impl Adjoints<'_> {
    /// Buffer for `v`, or `None` when `v` takes no gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.value.requires_grad {
            return None;
        }
        let n = node.value.len();
        Some(self.bufs[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    pub(crate) fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

/// Recorded computation for one forward pass.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    params: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph in inference mode (dropout disabled).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Graph in training mode; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Its `requires_grad` flag decides whether it collects a gradient.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf that never takes a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    /// Binds parameter number `id`, copying it in on first use.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Var {
        if let Some(Some(v)) = self.params.get(id) {
            return *v;
        }
        let mut copy = Tensor::new(value.shape.clone(), value.data.clone()).expect("parameter tensors are well formed");
        copy.requires_grad = value.requires_grad;
        let v = self.leaf(copy);
        if self.params.len() <= id {
            self.params.resize(id + 1, None);
        }
        self.params[id] = Some(v);
        v
    }

    /// `(parameter id, node)` for every bound parameter.
    pub fn param_bindings(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        debug_assert_eq!(super::numel(&shape), data.len());
        self.nodes.push(Node {
            value: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d`loss`/d(node) to every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape.clone()));
        }
        if !lv.requires_grad {
            return Ok(());
        }
        let mut bufs: Vec<Option<Vec<f64>>> = Vec::new();
        bufs.resize_with(loss.0 + 1, || None);
        bufs[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();
        {
            let nodes = &self.nodes[..=loss.0];
            let mut adj = Adjoints { nodes, bufs };
            for i in (0..=loss.0).rev() {
                let Some(g) = adj.bufs[i].take() else { continue };
                let node = &nodes[i];
                if !node.value.requires_grad {
                    continue;
                }
                let out = &node.value;
                match &node.op {
                    Op::Leaf => leaf_grads.push((i, g)),
                    Op::Binary(op) => op.backward(&g, &mut adj),
                    Op::Unary { kind, a } => super::elementwise::unary_backward(*kind, *a, out, &g, &mut adj),
                    Op::Scale { a, factor } => {
                        if let Some(da) = adj.slot(*a) {
                            da.iter_mut().zip(&g).for_each(|(d, g)| *d += g * factor);
                        }
                    }
                    Op::MulConst { a, factors } => {
                        if let Some(da) = adj.slot(*a) {
                            for ((d, g), f) in da.iter_mut().zip(&g).zip(factors) {
                                *d += g * f;
                            }
                        }
                    }
                    Op::MatMul(op) => op.backward(&g, &mut adj),
                    Op::Softmax(op) => op.backward(out, &g, &mut adj),
                    Op::Reduce(op) => op.backward(out, &g, &mut adj),
                    Op::LayerNorm(op) => op.backward(&g, &mut adj),
                    Op::Conv(op) => op.backward(&g, &mut adj),
                    Op::Reshape { a } => {
                        if let Some(da) = adj.slot(*a) {
                            da.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                        }
                    }
                    Op::Permute(op) => op.backward(&g, &mut adj),
                    Op::Concat(op) => op.backward(&g, &mut adj),
                    Op::Narrow(op) => op.backward(&g, &mut adj),
                    Op::Gather(op) => op.backward(&g, &mut adj),
                    Op::IndexSelect(op) => op.backward(&g, &mut adj),
                    Op::MaskedFill { a, mask } => {
                        if let Some(da) = adj.slot(*a) {
                            let m = mask.len();
                            for (j, (d, g)) in da.iter_mut().zip(&g).enumerate() {
                                if !mask[j % m] {
                                    *d += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }
}
