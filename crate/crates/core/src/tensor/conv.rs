use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Adjoints, Graph, Op, Var};
use crate::error::{Error, Result};

/// Output length of a valid-padding convolution along one axis.
pub fn conv2d_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (stride >= 1 && kernel >= 1 && kernel <= input).then(|| (input - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn conv_transpose2d_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input - 1) * stride + kernel + padding
}

// Both directions share one index pattern. The "small" side is the conv output
// (or transpose input); the "big" side is the conv input (or transpose output).
// Pixel (i, j) on the small side touches big pixels (i*s + dy, j*s + dx), and
// the kernel is always laid out [kh, kw, c_big, c_small].
#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    small: (usize, usize),
    big: (usize, usize),
    kernel: (usize, usize),
    stride: usize,
    c_big: usize,
    c_small: usize,
}

impl Geometry {
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (kw, cb, cs) = (self.kernel.1, self.c_big, self.c_small);
        self.for_each_row(|s, b, k| {
            for dx in 0..kw {
                f(s, b + dx * cb, k + dx * cb * cs);
            }
        });
    }

    // Taps that share a kernel row are contiguous on the big side and in the
    // kernel, so each call covers `kw * c_big` big values at once.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (sh, sw) = self.small;
        let (bh, bw) = self.big;
        let (kh, kw) = self.kernel;
        for b in 0..self.batch {
            for i in 0..sh {
                for j in 0..sw {
                    let small = ((b * sh + i) * sw + j) * self.c_small;
                    for dy in 0..kh {
                        let y = i * self.stride + dy;
                        let big = ((b * bh + y) * bw + j * self.stride) * self.c_big;
                        let k = dy * kw * self.c_big * self.c_small;
                        f(small, big, k);
                    }
                }
            }
        }
    }

    fn row_len(&self) -> usize {
        self.kernel.1 * self.c_big
    }

    /// small += K^T big
    fn gather(&self, big: &[f64], kernel: &[f64], small: &mut [f64]) {
        let (cs, len) = (self.c_small, self.row_len());
        self.for_each_row(|s, b, k| {
            let out = &mut small[s..s + cs];
            let rows = kernel[k..k + len * cs].chunks_exact(cs);
            for (&v, row) in big[b..b + len].iter().zip(rows) {
                if v == 0.0 {
                    continue;
                }
                for (o, w) in out.iter_mut().zip(row) {
                    *o += v * w;
                }
            }
        });
    }

    /// big += K small
    fn scatter(&self, small: &[f64], kernel: &[f64], big: &mut [f64]) {
        let (cb, cs) = (self.c_big, self.c_small);
        if cb >= 8 {
            // Per-tap blocks transposed to [c_small, c_big] so the inner loop is an axpy.
            let mut kt = vec![0.0; kernel.len()];
            for (blk, tblk) in kernel.chunks(cb * cs).zip(kt.chunks_mut(cb * cs)) {
                for c in 0..cb {
                    for d in 0..cs {
                        tblk[d * cb + c] = blk[c * cs + d];
                    }
                }
            }
            self.for_each_tap(|s, b, k| {
                let out = &mut big[b..b + cb];
                for (&v, row) in small[s..s + cs].iter().zip(kt[k..k + cb * cs].chunks_exact(cb)) {
                    if v == 0.0 {
                        continue;
                    }
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += v * w;
                    }
                }
            });
            return;
        }
        let len = self.row_len();
        self.for_each_row(|s, b, k| {
            let src = &small[s..s + cs];
            let rows = kernel[k..k + len * cs].chunks_exact(cs);
            for (o, row) in big[b..b + len].iter_mut().zip(rows) {
                *o += dot(src, row);
            }
        });
    }

    /// dK += big ⊗ small
    fn outer(&self, big: &[f64], small: &[f64], dk: &mut [f64]) {
        let (cs, len) = (self.c_small, self.row_len());
        self.for_each_row(|s, b, k| {
            let src = &small[s..s + cs];
            let rows = dk[k..k + len * cs].chunks_exact_mut(cs);
            for (&v, row) in big[b..b + len].iter().zip(rows) {
                if v == 0.0 {
                    continue;
                }
                for (d, g) in row.iter_mut().zip(src) {
                    *d += v * g;
                }
            }
        });
    }
}

/// Dot product with four running sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) struct ConvOp {
    input: Var,
    kernel: Var,
    geom: Geometry,
    transpose: bool,
}

impl ConvOp {
    pub(crate) fn backward(&self, g: &[f64], adj: &mut Adjoints<'_>) {
        let kv = adj.value(self.kernel).data().to_vec();
        let xv = adj.value(self.input).data().to_vec();
        let geom = self.geom;
        if self.transpose {
            if let Some(dx) = adj.slot(self.input) {
                geom.gather(g, &kv, dx);
            }
            if let Some(dk) = adj.slot(self.kernel) {
                geom.outer(g, &xv, dk);
            }
        } else {
            if let Some(dx) = adj.slot(self.input) {
                geom.scatter(g, &kv, dx);
            }
            if let Some(dk) = adj.slot(self.kernel) {
                geom.outer(&xv, g, dk);
            }
        }
    }
}

/// Splits `[B?, H, W, C]` into (batch, H, W, C, has_batch).
fn split_image(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c, false)),
        [b, h, w, c] => Ok((b, h, w, c, true)),
        _ => Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected [H, W, C] or [B, H, W, C]",
        }),
    }
}

fn image_shape(batch: usize, h: usize, w: usize, c: usize, has_batch: bool) -> Vec<usize> {
    if has_batch {
        vec![batch, h, w, c]
    } else {
        vec![h, w, c]
    }
}

impl Graph {
    /// Valid-padding 2-D convolution over channels-last images.
    ///
    /// `input` is `[H, W, Cin]` or `[B, H, W, Cin]`; `kernel` is `[kh, kw, Cin, Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (batch, h, w, cin, has_batch) = split_image("conv2d", self.shape(input))?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 || ks[2] != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape(input).to_vec(),
                rhs: ks,
            });
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv2d stride must be at least 1".into()));
        }
        let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
        let (Some(oh), Some(ow)) = (conv2d_output_len(h, kh, stride), conv2d_output_len(w, kw, stride)) else {
            return Err(Error::KernelTooLarge {
                kernel: (kh, kw),
                input: (h, w),
            });
        };
        let geom = Geometry {
            batch,
            small: (oh, ow),
            big: (h, w),
            kernel: (kh, kw),
            stride,
            c_big: cin,
            c_small: cout,
        };
        let mut out = vec![0.0; batch * oh * ow * cout];
        geom.gather(self.data(input), self.data(kernel), &mut out);
        let shape = image_shape(batch, oh, ow, cout, has_batch);
        let op = ConvOp {
            input,
            kernel,
            geom,
            transpose: false,
        };
        Ok(self.push(shape, out, Op::Conv(op), &[input, kernel]))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same kernel.
    ///
    /// `input` is `[h, w, Cin]` (optionally batched) and `kernel` is
    /// `[kh, kw, Cout, Cin]`. `output_padding` adds rows/columns at the far
    /// edge per axis and must be below `stride`.
    pub fn conv2d_transpose(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let (batch, h, w, cin, has_batch) = split_image("conv2d_transpose", self.shape(input))?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 || ks[3] != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                lhs: self.shape(input).to_vec(),
                rhs: ks,
            });
        }
        if stride == 0 {
            return Err(Error::InvalidConfig(
                "conv2d_transpose stride must be at least 1".into(),
            ));
        }
        for p in [output_padding.0, output_padding.1] {
            if p >= stride {
                return Err(Error::OutputPadding { padding: p, stride });
            }
        }
        let (kh, kw, cout) = (ks[0], ks[1], ks[2]);
        let oh = conv_transpose2d_output_len(h, kh, stride, output_padding.0);
        let ow = conv_transpose2d_output_len(w, kw, stride, output_padding.1);
        let geom = Geometry {
            batch,
            small: (h, w),
            big: (oh, ow),
            kernel: (kh, kw),
            stride,
            c_big: cout,
            c_small: cin,
        };
        let mut out = vec![0.0; batch * oh * ow * cout];
        geom.scatter(self.data(input), self.data(kernel), &mut out);
        let shape = image_shape(batch, oh, ow, cout, has_batch);
        let op = ConvOp {
            input,
            kernel,
            geom,
            transpose: true,
        };
        Ok(self.push(shape, out, Op::Conv(op), &[input, kernel]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn full_scale_chain() {
        let (mut h, mut w) = (960, 1072);
        for _ in 0..5 {
            h = conv2d_output_len(h, 3, 2).unwrap();
            w = conv2d_output_len(w, 3, 2).unwrap();
        }
        assert_eq!((h, w), (29, 32));
        assert_eq!(conv_transpose2d_output_len(29, 3, 2, 0), 59);
        assert_eq!(conv_transpose2d_output_len(32, 3, 2, 1), 66);
    }

    #[test]
    fn window_sums_with_ones_kernel() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let x = g.leaf(Tensor::new(vec![4, 4, 1], data.clone()).unwrap());
        let k = g.leaf(Tensor::full(&[3, 3, 1, 1], 1.0));
        let y = g.conv2d(x, k, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 2, 1]);
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += data[(oy + dy) * 4 + ox + dx];
                    }
                }
                assert_eq!(g.data(y)[oy * 2 + ox], s);
            }
        }
    }

    #[test]
    fn identity_kernels() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..18).map(|v| v as f64 * 0.3).collect();
        let x = g.leaf(Tensor::new(vec![3, 3, 2], data.clone()).unwrap());
        let eye = g.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.conv2d(x, eye, 1).unwrap();
        assert_eq!(g.data(y), data.as_slice());
        let z = g.conv2d_transpose(x, eye, 1, (0, 0)).unwrap();
        assert_eq!(g.data(z), data.as_slice());
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2, 1]));
        let k = g.leaf(Tensor::zeros(&[3, 3, 1, 1]));
        assert!(matches!(g.conv2d(x, k, 1), Err(Error::KernelTooLarge { .. })));
        assert_eq!(
            g.conv2d_transpose(x, k, 2, (2, 0)),
            Err(Error::OutputPadding { padding: 2, stride: 2 })
        );
    }
}
