use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Adjoints, Graph, Op, Var};
use super::numel;
use crate::error::{Error, Result};

/// Logit used for masked attention positions.
pub const MASK_VALUE: f64 = -1e9;

pub(crate) struct PermuteOp {
    a: Var,
    /// `src[i]` is the input offset feeding output element `i`.
    src: Vec<usize>,
}

impl PermuteOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        if let Some(da) = adj.slot(self.a) {
            for (gi, &s) in g.iter().zip(&self.src) {
                da[s] += gi;
            }
        }
    }
}

pub(crate) struct ConcatOp {
    parts: Vec<(Var, usize)>,
    outer: usize,
    inner: usize,
    total: usize,
}

impl ConcatOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        let mut offset = 0;
        for &(v, len) in &self.parts {
            if let Some(dv) = adj.slot(v) {
                let block = len * self.inner;
                for o in 0..self.outer {
                    let src = &g[(o * self.total + offset) * self.inner..][..block];
                    for (d, s) in dv[o * block..][..block].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            offset += len;
        }
    }
}

pub(crate) struct NarrowOp {
    a: Var,
    outer: usize,
    inner: usize,
    full: usize,
    start: usize,
    len: usize,
}

impl NarrowOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        if let Some(da) = adj.slot(self.a) {
            let block = self.len * self.inner;
            for o in 0..self.outer {
                let dst = &mut da[(o * self.full + self.start) * self.inner..][..block];
                for (d, s) in dst.iter_mut().zip(&g[o * block..][..block]) {
                    *d += s;
                }
            }
        }
    }
}

pub(crate) struct GatherOp {
    table: Var,
    ids: Vec<usize>,
    width: usize,
}

impl GatherOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        if let Some(dt) = adj.slot(self.table) {
            for (r, &id) in self.ids.iter().enumerate() {
                let src = &g[r * self.width..][..self.width];
                for (d, s) in dt[id * self.width..][..self.width].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

pub(crate) struct IndexSelectOp {
    a: Var,
    ids: Vec<usize>,
    outer: usize,
    inner: usize,
    full: usize,
}

impl IndexSelectOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        if let Some(da) = adj.slot(self.a) {
            let n = self.ids.len();
            for o in 0..self.outer {
                for (j, &id) in self.ids.iter().enumerate() {
                    let src = &g[(o * n + j) * self.inner..][..self.inner];
                    let dst = &mut da[(o * self.full + id) * self.inner..][..self.inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn axis_check(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        if self.shape(a) == shape {
            return Ok(a);
        }
        let data = self.data(a).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape { a }, &[a]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || core::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidShape {
                op: "permute",
                shape,
                reason: "permutation does not match rank",
            });
        }
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = numel(&shape);
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..n {
            src.push(off);
            let mut d = rank;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                off += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                off -= strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        let x = self.data(a);
        let out: Vec<f64> = src.iter().map(|&s| x[s]).collect();
        Ok(self.push(out_shape, out, Op::Permute(PermuteOp { a, src }), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: self.shape(a).to_vec(),
                reason: "needs at least two axes",
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat"));
        };
        let base = self.shape(first).to_vec();
        axis_check("concat", &base, axis)?;
        let mut total = 0;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
            lens.push((p, s[axis]));
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, len) in &lens {
                out.extend_from_slice(&self.data(p)[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = ConcatOp {
            parts: lens,
            outer,
            inner,
            total,
        };
        Ok(self.push(shape, out, Op::Concat(op), parts))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        axis_check("narrow", &shape, axis)?;
        let full = shape[axis];
        if len == 0 || start + len > full {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: full,
            });
        }
        if len == full {
            return Ok(a);
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let x = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * full + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let op = NarrowOp {
            a,
            outer,
            inner,
            full,
            start,
            len,
        };
        Ok(self.push(out_shape, out, Op::Narrow(op), &[a]))
    }

    /// Embedding lookup: rows `ids` of a `[rows, d]` table, giving `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape,
                reason: "table must be [rows, d]",
            });
        }
        if ids.is_empty() {
            return Err(Error::Empty("gather_rows ids"));
        }
        let (rows, width) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange { index: bad, len: rows });
        }
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            out.extend_from_slice(&t[id * width..][..width]);
        }
        let op = GatherOp {
            table,
            ids: ids.to_vec(),
            width,
        };
        Ok(self.push(vec![ids.len(), width], out, Op::Gather(op), &[table]))
    }

    /// Picks entries `ids` (in that order) along `axis`.
    pub fn index_select(&mut self, a: Var, axis: usize, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        axis_check("index_select", &shape, axis)?;
        let full = shape[axis];
        if ids.is_empty() {
            return Err(Error::Empty("index_select ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= full) {
            return Err(Error::IndexOutOfRange { index: bad, len: full });
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let x = self.data(a);
        let mut out = Vec::with_capacity(outer * ids.len() * inner);
        for o in 0..outer {
            for &id in ids {
                out.extend_from_slice(&x[(o * full + id) * inner..][..inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = ids.len();
        let op = IndexSelectOp {
            a,
            ids: ids.to_vec(),
            outer,
            inner,
            full,
        };
        Ok(self.push(out_shape, out, Op::IndexSelect(op), &[a]))
    }

    /// Replaces positions where `mask` is true with [`MASK_VALUE`]. The mask
    /// covers the trailing axes of `a` and repeats over the leading ones.
    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let n = self.value(a).len();
        if mask.is_empty() || n % mask.len() != 0 {
            return Err(Error::LengthMismatch(mask.len(), n));
        }
        let m = mask.len();
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask[i % m] { MASK_VALUE } else { v })
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::MaskedFill { a, mask }, &[a]))
    }
}
