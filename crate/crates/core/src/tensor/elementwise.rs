use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::{Adjoints, Graph, Op, Var};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    /// ELU with alpha = 1.
    Elu,
    Relu,
    Exp,
    Log,
}

/// Index mapping for a broadcast binary op. Trailing axes are aligned and a
/// size-1 axis stretches to match the other operand.
#[derive(Debug, Clone)]
pub(crate) struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    kind: Layout,
}

#[derive(Debug, Clone, Copy)]
enum Layout {
    Same,
    /// `b` repeats over the leading axes of `a`.
    BSuffix(usize),
    ASuffix(usize),
    General,
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

impl Broadcast {
    pub(crate) fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let mut out = vec![0; rank];
        for i in 0..rank {
            let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
            let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
            out[i] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: a.to_vec(),
                        rhs: b.to_vec(),
                    })
                }
            };
        }
        let kind = if a == b {
            Layout::Same
        } else if out.as_slice() == a && a.ends_with(b) {
            Layout::BSuffix(numel(b))
        } else if out.as_slice() == b && b.ends_with(a) {
            Layout::ASuffix(numel(a))
        } else {
            Layout::General
        };
        let sa = strides_for(a, &out);
        let sb = strides_for(b, &out);
        Ok(Self { out, sa, sb, kind })
    }

    pub(crate) fn out_shape(&self) -> &[usize] {
        &self.out
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element.
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = numel(&self.out);
        match self.kind {
            Layout::Same => (0..n).for_each(|i| f(i, i, i)),
            Layout::BSuffix(m) => (0..n).for_each(|i| f(i, i, i % m)),
            Layout::ASuffix(m) => (0..n).for_each(|i| f(i, i % m, i)),
            Layout::General => {
                let rank = self.out.len();
                let mut idx = vec![0usize; rank];
                let (mut ia, mut ib) = (0usize, 0usize);
                for o in 0..n {
                    f(o, ia, ib);
                    let mut d = rank;
                    while d > 0 {
                        d -= 1;
                        idx[d] += 1;
                        ia += self.sa[d];
                        ib += self.sb[d];
                        if idx[d] < self.out[d] {
                            break;
                        }
                        ia -= self.sa[d] * self.out[d];
                        ib -= self.sb[d] * self.out[d];
                        idx[d] = 0;
                    }
                }
            }
        }
    }
}

pub(crate) struct BinaryOp {
    kind: BinaryKind,
    a: Var,
    b: Var,
    map: Broadcast,
}

impl BinaryOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        match self.kind {
            BinaryKind::Add | BinaryKind::Sub => {
                let sign = if self.kind == BinaryKind::Sub { -1.0 } else { 1.0 };
                if let Some(da) = adj.slot(self.a) {
                    self.map.for_each(|o, ia, _| da[ia] += g[o]);
                }
                if let Some(db) = adj.slot(self.b) {
                    self.map.for_each(|o, _, ib| db[ib] += sign * g[o]);
                }
            }
            BinaryKind::Mul => {
                let bv = adj.value(self.b).data().to_vec();
                if let Some(da) = adj.slot(self.a) {
                    self.map.for_each(|o, ia, ib| da[ia] += g[o] * bv[ib]);
                }
                let av = adj.value(self.a).data().to_vec();
                if let Some(db) = adj.slot(self.b) {
                    self.map.for_each(|o, ia, ib| db[ib] += g[o] * av[ia]);
                }
            }
        }
    }
}

pub(crate) fn unary_backward(kind: UnaryKind, a: Var, out: &Tensor, g: &[f64], adj: &mut Adjoints<'_>) {
    let x = adj.value(a).data().to_vec();
    let y = out.data();
    let Some(da) = adj.slot(a) else { return };
    for i in 0..da.len() {
        let local = match kind {
            UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
            UnaryKind::Tanh => 1.0 - y[i] * y[i],
            UnaryKind::Elu => {
                if x[i] > 0.0 {
                    1.0
                } else {
                    y[i] + 1.0
                }
            }
            UnaryKind::Relu => {
                if x[i] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Exp => y[i],
            UnaryKind::Log => 1.0 / x[i],
        };
        da[i] += g[i] * local;
    }
}

fn apply_unary(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Sigmoid => math::sigmoid(x),
        UnaryKind::Tanh => math::tanh(x),
        UnaryKind::Elu => {
            if x > 0.0 {
                x
            } else {
                math::exp(x) - 1.0
            }
        }
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Exp => math::exp(x),
        UnaryKind::Log => math::ln(x),
    }
}

impl Graph {
    fn binary(&mut self, kind: BinaryKind, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let map = Broadcast::new(name, self.shape(a), self.shape(b))?;
        let av = self.data(a);
        let bv = self.data(b);
        let mut out = vec![0.0; numel(map.out_shape())];
        match kind {
            BinaryKind::Add => map.for_each(|o, ia, ib| out[o] = av[ia] + bv[ib]),
            BinaryKind::Sub => map.for_each(|o, ia, ib| out[o] = av[ia] - bv[ib]),
            BinaryKind::Mul => map.for_each(|o, ia, ib| out[o] = av[ia] * bv[ib]),
        }
        let shape = map.out_shape().to_vec();
        Ok(self.push(shape, out, Op::Binary(BinaryOp { kind, a, b, map }), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let x = self.data(a);
        if kind == UnaryKind::Log {
            if let Some(&bad) = x.iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain(bad));
            }
        }
        let out: Vec<f64> = x.iter().map(|&v| apply_unary(kind, v)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Unary { kind, a }, &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a).expect("total")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a).expect("total")
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Elu, a).expect("total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a).expect("total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a).expect("total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|v| v * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale { a, factor }, &[a])
    }

    /// Elementwise product with a constant of identical shape.
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(a).len() {
            return Err(Error::LengthMismatch(factors.len(), self.value(a).len()));
        }
        let out: Vec<f64> = self.data(a).iter().zip(&factors).map(|(v, f)| v * f).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::MulConst { a, factors }, &[a]))
    }

    /// Inverted dropout; identity outside training mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(alloc::format!(
                "dropout rate {rate} outside [0,1)"
            )));
        }
        if !self.is_training() || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let rng = self.rng();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn activations_at_reference_points() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[0.0, 1.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.data(s)[0], 0.5);
        let e = g.elu(x);
        assert_eq!(g.data(e), &[0.0, 1.0]);
    }

    #[test]
    fn add_matches_elementwise_sum() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[1.0, 2.0]);
        let b = leaf(&mut g, &[2], &[3.0, 4.0]);
        let c = g.add(a, b).unwrap();
        assert_eq!(g.data(c), &[4.0, 6.0]);
    }

    #[test]
    fn broadcast_leading_and_trailing() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bias = leaf(&mut g, &[3], &[10.0, 20.0, 30.0]);
        let col = leaf(&mut g, &[2, 1], &[1.0, -1.0]);
        let s = g.add(a, bias).unwrap();
        assert_eq!(g.data(s), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let m = g.mul(a, col).unwrap();
        assert_eq!(g.data(m), &[1.0, 2.0, 3.0, -4.0, -5.0, -6.0]);
        let mid = leaf(&mut g, &[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let wide = leaf(&mut g, &[3, 2], &[0.0; 6]);
        let r = g.add(mid, wide).unwrap();
        assert_eq!(g.shape(r), &[2, 3, 2]);
        assert_eq!(g.data(r), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut g, &[2], &[0.0; 2]);
        match g.add(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[1.0, 0.0]);
        assert_eq!(g.log(a), Err(Error::Domain(0.0)));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).with_requires_grad(true));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), Some(&[6.0][..]));
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), Some(&[12.0][..]));
    }

    #[test]
    fn frozen_input_gets_no_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).with_requires_grad(true));
        let c = g.leaf(Tensor::scalar(2.0));
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), Some(&[2.0][..]));
        assert_eq!(g.grad(c), None);
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);
        let mut t = Graph::training(3);
        let x = leaf(&mut t, &[1000], &[1.0; 1000]);
        let d = t.dropout(x, 0.25).unwrap();
        let kept = t.data(d).iter().filter(|&&v| v != 0.0).count();
        assert!(t.data(d).iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
        assert!((650..850).contains(&kept));
    }
}
