use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Adjoints, Graph, Op, Var};
use super::numel;
use crate::error::{Error, Result};

/// How rows of `a` pick their right-hand matrix.
#[derive(Debug, Clone, Copy)]
enum Mode {
    /// One `[k, n]` matrix for every row.
    Shared,
    /// `b` is `[.., k, n]` and row `r` uses matrix `r / m`.
    Batched { m: usize },
    /// `b` is `[G, k, n]` and row `r` uses matrix `r % G`.
    Grouped { groups: usize },
}

pub(crate) struct MatMulOp {
    a: Var,
    b: Var,
    mode: Mode,
    k: usize,
    n: usize,
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

impl Mode {
    #[inline]
    fn matrix(self, row: usize) -> usize {
        match self {
            Mode::Shared => 0,
            Mode::Batched { m } => row / m,
            Mode::Grouped { groups } => row % groups,
        }
    }
}

fn forward(a: &[f64], b: &[f64], mode: Mode, k: usize, n: usize) -> Vec<f64> {
    let rows = a.len() / k;
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let bm = &b[mode.matrix(r) * k * n..][..k * n];
        let arow = &a[r * k..][..k];
        let orow = &mut out[r * n..][..n];
        for (kk, &av) in arow.iter().enumerate() {
            axpy(av, &bm[kk * n..][..n], orow);
        }
    }
    out
}

impl MatMulOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        let (k, n) = (self.k, self.n);
        let rows = g.len() / n;
        let bv = adj.value(self.b).data().to_vec();
        if let Some(da) = adj.slot(self.a) {
            for r in 0..rows {
                let bm = &bv[self.mode.matrix(r) * k * n..][..k * n];
                let grow = &g[r * n..][..n];
                let darow = &mut da[r * k..][..k];
                for (kk, d) in darow.iter_mut().enumerate() {
                    *d += dot(grow, &bm[kk * n..][..n]);
                }
            }
        }
        let av = adj.value(self.a).data().to_vec();
        if let Some(db) = adj.slot(self.b) {
            for r in 0..rows {
                let off = self.mode.matrix(r) * k * n;
                let grow = &g[r * n..][..n];
                let arow = &av[r * k..][..k];
                for (kk, &a) in arow.iter().enumerate() {
                    axpy(a, grow, &mut db[off + kk * n..][..n]);
                }
            }
        }
    }
}

impl Graph {
    /// Matrix product.
    ///
    /// With a rank-2 `b` of shape `[k, n]`, `a` may have any number of leading
    /// axes and its last axis is contracted. With a higher-rank `b`, both
    /// operands carry identical leading batch axes: `[.., m, k] x [.., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.is_empty() || sb.len() < 2 {
            return Err(mismatch());
        }
        let k = sb[sb.len() - 2];
        let n = sb[sb.len() - 1];
        if sa[sa.len() - 1] != k {
            return Err(mismatch());
        }
        let (mode, mut shape) = if sb.len() == 2 {
            (Mode::Shared, sa[..sa.len() - 1].to_vec())
        } else {
            if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch());
            }
            let m = sa[sa.len() - 2];
            (Mode::Batched { m }, sa[..sa.len() - 1].to_vec())
        };
        shape.push(n);
        let out = forward(self.data(a), self.data(b), mode, k, n);
        Ok(self.push(shape, out, Op::MatMul(MatMulOp { a, b, mode, k, n }), &[a, b]))
    }

    /// Per-group product: `a` is `[.., G, k]`, `w` is `[G, k, n]`, and slice
    /// `g` of `a` is multiplied by `w[g]`, giving `[.., G, n]`.
    pub fn matmul_grouped(&mut self, a: Var, w: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sw = self.shape(w).to_vec();
        if sa.len() < 2 || sw.len() != 3 || sa[sa.len() - 2] != sw[0] || sa[sa.len() - 1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_grouped",
                lhs: sa,
                rhs: sw,
            });
        }
        let (groups, k, n) = (sw[0], sw[1], sw[2]);
        let mode = Mode::Grouped { groups };
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        debug_assert_eq!(numel(&shape), numel(&sa) / k * n);
        let out = forward(self.data(a), self.data(w), mode, k, n);
        Ok(self.push(shape, out, Op::MatMul(MatMulOp { a, b: w, mode, k, n }), &[a, w]))
    }
}
