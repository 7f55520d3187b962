use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Adjoints, Graph, Op, Var};
use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// `(outer, len, inner)` view of a tensor around one axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisView {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisView {
    fn new(op: &'static str, shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                op,
                axis,
                rank: shape.len(),
            });
        }
        Ok(Self {
            outer: numel(&shape[..axis]),
            len: shape[axis],
            inner: numel(&shape[axis + 1..]),
        })
    }

    /// Affine parameter index for element `i` at lane position `j`. When the
    /// axis is last, gains may span several trailing axes.
    #[inline]
    fn affine(self, i: usize, j: usize, glen: usize) -> usize {
        if self.inner == 1 {
            i % glen
        } else {
            j
        }
    }

    /// Flat indices of every lane along the axis, as (base, stride).
    fn lanes(self) -> impl Iterator<Item = usize> {
        let (len, inner) = (self.len, self.inner);
        (0..self.outer).flat_map(move |o| (0..inner).map(move |i| o * len * inner + i))
    }
}

pub(crate) struct SoftmaxOp {
    a: Var,
    view: AxisView,
}

impl SoftmaxOp {
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64], adj: &mut Adjoints<'_>) {
        let y = out.data();
        let Some(da) = adj.slot(self.a) else { return };
        let AxisView { len, inner, .. } = self.view;
        for base in self.view.lanes() {
            let s: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
            for j in 0..len {
                let i = base + j * inner;
                da[i] += y[i] * (g[i] - s);
            }
        }
    }
}

pub(crate) struct ReduceOp {
    a: Var,
    kind: ReduceKind,
    /// Output slot of every input element.
    target: Vec<usize>,
    /// For max: the input index chosen per output element.
    argmax: Vec<usize>,
    count: usize,
}

impl ReduceOp {
    pub(crate) fn backward(&self, _out: &Tensor, g: &[f64], adj: &mut Adjoints<'_>) {
        let Some(da) = adj.slot(self.a) else { return };
        match self.kind {
            ReduceKind::Sum => self.target.iter().zip(da.iter_mut()).for_each(|(&t, d)| *d += g[t]),
            ReduceKind::Mean => {
                let c = self.count as f64;
                self.target.iter().zip(da.iter_mut()).for_each(|(&t, d)| *d += g[t] / c)
            }
            ReduceKind::Max => {
                for (o, &i) in self.argmax.iter().enumerate() {
                    da[i] += g[o];
                }
            }
        }
    }
}

pub(crate) struct LayerNormOp {
    a: Var,
    gain: Var,
    bias: Var,
    view: AxisView,
    glen: usize,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl LayerNormOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        let AxisView { len, inner, .. } = self.view;
        let gain = adj.value(self.gain).data().to_vec();
        if let Some(dg) = adj.slot(self.gain) {
            for base in self.view.lanes() {
                for j in 0..len {
                    let i = base + j * inner;
                    dg[self.view.affine(i, j, self.glen)] += g[i] * self.xhat[i];
                }
            }
        }
        if let Some(db) = adj.slot(self.bias) {
            for base in self.view.lanes() {
                for j in 0..len {
                    let i = base + j * inner;
                    db[self.view.affine(i, j, self.glen)] += g[i];
                }
            }
        }
        if let Some(da) = adj.slot(self.a) {
            let n = len as f64;
            for (lane, base) in self.view.lanes().enumerate() {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..len {
                    let i = base + j * inner;
                    let d = g[i] * gain[self.view.affine(i, j, self.glen)];
                    sum_d += d;
                    sum_dx += d * self.xhat[i];
                }
                let r = self.rstd[lane];
                for j in 0..len {
                    let i = base + j * inner;
                    let d = g[i] * gain[self.view.affine(i, j, self.glen)];
                    da[i] += r / n * (n * d - sum_d - self.xhat[i] * sum_dx);
                }
            }
        }
    }
}

impl Graph {
    /// Softmax along `axis`, stabilised by subtracting the lane maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let view = AxisView::new("softmax", &shape, axis)?;
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        let AxisView { len, inner, .. } = view;
        for base in view.lanes() {
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = math::exp(x[base + j * inner] - max);
                out[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                out[base + j * inner] /= sum;
            }
        }
        Ok(self.push(shape, out, Op::Softmax(SoftmaxOp { a, view }), &[a]))
    }

    /// Reduces over `axes`, dropping them from the shape.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axes.is_empty() {
            return Err(Error::EmptyReduction);
        }
        let mut reduced = vec![false; shape.len()];
        for &ax in axes {
            if ax >= shape.len() {
                return Err(Error::InvalidAxis {
                    op: "reduce",
                    axis: ax,
                    rank: shape.len(),
                });
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let count = numel(&shape) / numel(&out_shape);
        // output stride of each input axis (0 for reduced axes)
        let mut ostride = vec![0usize; shape.len()];
        let mut acc = 1;
        for i in (0..shape.len()).rev() {
            if !reduced[i] {
                ostride[i] = acc;
                acc *= shape[i];
            }
        }
        let n = numel(&shape);
        let mut target = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        let mut t = 0usize;
        for _ in 0..n {
            target.push(t);
            let mut d = shape.len();
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                t += ostride[d];
                if idx[d] < shape[d] {
                    break;
                }
                t -= ostride[d] * shape[d];
                idx[d] = 0;
            }
        }
        let x = self.data(a);
        let m = numel(&out_shape);
        let mut out = vec![0.0; m];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for (i, &t) in target.iter().enumerate() {
                    out[t] += x[i];
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= count as f64);
                }
            }
            ReduceKind::Max => {
                out.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
                argmax = vec![usize::MAX; m];
                for (i, &t) in target.iter().enumerate() {
                    if argmax[t] == usize::MAX || x[i] > out[t] {
                        out[t] = x[i];
                        argmax[t] = i;
                    }
                }
            }
        }
        let op = ReduceOp {
            a,
            kind,
            target,
            argmax,
            count,
        };
        Ok(self.push(out_shape, out, Op::Reduce(op), &[a]))
    }

    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, axes)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, axes)
    }

    /// Mean of every element, as a rank-0 tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return a;
        }
        self.reduce(ReduceKind::Mean, a, &axes).expect("valid axes")
    }

    /// Normalises each lane along `axis` to zero mean and unit variance, then
    /// applies `gain` and `bias`. These are shaped `[shape[axis]]`, or, when
    /// `axis` is the last axis, any trailing suffix of the input shape.
    pub fn layer_norm(&mut self, a: Var, axis: usize, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let view = AxisView::new("layer_norm", &shape, axis)?;
        if view.len < 2 {
            return Err(Error::InvalidShape {
                op: "layer_norm",
                shape,
                reason: "normalised axis needs at least 2 entries",
            });
        }
        for p in [gain, bias] {
            let ps = self.shape(p);
            let ok = ps == [view.len] || (view.inner == 1 && !ps.is_empty() && shape.ends_with(ps));
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let glen = self.value(gain).len();
        let x = self.data(a);
        let gv = self.data(gain);
        let bv = self.data(bias);
        let AxisView { len, inner, .. } = view;
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = Vec::with_capacity(view.outer * inner);
        for base in view.lanes() {
            let mean = (0..len).map(|j| x[base + j * inner]).sum::<f64>() / len as f64;
            let var = (0..len)
                .map(|j| {
                    let d = x[base + j * inner] - mean;
                    d * d
                })
                .sum::<f64>()
                / len as f64;
            let r = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            for j in 0..len {
                let i = base + j * inner;
                xhat[i] = (x[i] - mean) * r;
                let k = view.affine(i, j, glen);
                out[i] = xhat[i] * gv[k] + bv[k];
            }
            rstd.push(r);
        }
        let op = LayerNormOp {
            a,
            gain,
            bias,
            view,
            glen,
            xhat,
            rstd,
        };
        Ok(self.push(shape, out, Op::LayerNorm(op), &[a, gain, bias]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn softmax_reference_values() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[0.0, 0.0]);
        let s = g.softmax(a, 0).unwrap();
        assert_eq!(g.data(s), &[0.5, 0.5]);
        let big = leaf(&mut g, &[2], &[1000.0, 1000.0]);
        let s = g.softmax(big, 0).unwrap();
        assert_eq!(g.data(s), &[0.5, 0.5]);
        let logs = leaf(&mut g, &[3], &[math::ln(1.0), math::ln(2.0), math::ln(3.0)]);
        let s = g.softmax(logs, 0).unwrap();
        for (v, e) in g.data(s).iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_over_middle_axis() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3, 2], &[1., 2., 3., 4., 5., 6., 0., 0., 1., 1., 2., 2.]);
        let s = g.softmax(a, 1).unwrap();
        let d = g.data(s);
        for o in 0..2 {
            for i in 0..2 {
                let total: f64 = (0..3).map(|j| d[o * 6 + j * 2 + i]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[3], &[1.0, 2.0, 3.0]);
        let s = g.sum(a, &[0]).unwrap();
        assert_eq!(g.data(s), &[6.0]);
        assert_eq!(g.shape(s), &[] as &[usize]);
        let c = g.leaf(Tensor::full(&[29, 32, 16], 2.5));
        let m = g.mean(c, &[0, 1]).unwrap();
        assert_eq!(g.shape(m), &[16]);
        assert!(g.data(m).iter().all(|&v| v == 2.5));
        let x = leaf(&mut g, &[2, 2], &[1.0, 5.0, 3.0, 2.0]);
        let mx = g.reduce(ReduceKind::Max, x, &[1]).unwrap();
        assert_eq!(g.data(mx), &[5.0, 3.0]);
        assert_eq!(g.reduce(ReduceKind::Sum, x, &[]), Err(Error::EmptyReduction));
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let one = g.leaf(Tensor::full(&[2], 1.0));
        let zero = g.leaf(Tensor::zeros(&[2]));
        let a = leaf(&mut g, &[2], &[1.0, 3.0]);
        let y = g.layer_norm(a, 0, one, zero).unwrap();
        assert!((g.data(y)[0] + 1.0).abs() < 1e-5 && (g.data(y)[1] - 1.0).abs() < 1e-5);
        let c = leaf(&mut g, &[2], &[4.0, 4.0]);
        let y = g.layer_norm(c, 0, one, zero).unwrap();
        assert_eq!(g.data(y), &[0.0, 0.0]);
        let b = leaf(&mut g, &[2], &[0.25, -0.5]);
        let y = g.layer_norm(a, 0, zero, b).unwrap();
        assert_eq!(g.data(y), &[0.25, -0.5]);
    }
}
