use alloc::vec::Vec;

use super::{Builder, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Single-layer LSTM with gates packed as `[input, forget, cell, output]`.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
    d: usize,
}

impl Lstm {
    pub fn new(b: &mut Builder<'_>, d_in: usize, d: usize) -> Result<Self> {
        Ok(Self {
            w_ih: b.uniform("W_ih", &[d_in, 4 * d], d_in)?,
            w_hh: b.uniform("W_hh", &[d, 4 * d], d)?,
            b: b.zeros("b", &[4 * d])?,
            d,
        })
    }

    pub fn hidden(&self) -> usize {
        self.d
    }

    fn cell(&self, g: &mut Graph, p: &ParamStore, z_x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_hh = p.bind(g, self.w_hh);
        let zh = g.matmul(h, w_hh)?;
        let z = g.add(z_x, zh)?;
        let d = self.d;
        let i = g.narrow(z, 1, 0, d)?;
        let f = g.narrow(z, 1, d, d)?;
        let cand = g.narrow(z, 1, 2 * d, d)?;
        let o = g.narrow(z, 1, 3 * d, d)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// One step on `x: [B, d_in]` with state `h, c: [B, d]`.
    pub fn step(&self, g: &mut Graph, p: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_ih = p.bind(g, self.w_ih);
        let b = p.bind(g, self.b);
        let zx = g.matmul(x, w_ih)?;
        let zx = g.add(zx, b)?;
        self.cell(g, p, zx, h, c)
    }

    /// Unrolls over `x: [B, T, d_in]`, returning `([B, T, d], h_T, c_T)`.
    pub fn sequence(&self, g: &mut Graph, p: &ParamStore, x: Var, h0: Var, c0: Var) -> Result<(Var, Var, Var)> {
        let shape = g.shape(x).to_vec();
        let (batch, steps) = (shape[0], shape[1]);
        let w_ih = p.bind(g, self.w_ih);
        let b = p.bind(g, self.b);
        let zx = g.matmul(x, w_ih)?;
        let zx = g.add(zx, b)?;
        let (mut h, mut c) = (h0, c0);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let zt = g.narrow(zx, 1, t, 1)?;
            let zt = g.reshape(zt, &[batch, 4 * self.d])?;
            (h, c) = self.cell(g, p, zt, h, c)?;
            outs.push(g.reshape(h, &[batch, 1, self.d])?);
        }
        let out = g.concat(&outs, 1)?;
        Ok((out, h, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_params;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(d_in: usize, d: usize) -> (ParamStore, Lstm) {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Lstm::new(&mut Builder::new(&mut s, &mut rng, "lstm"), d_in, d).unwrap();
        (s, l)
    }

    fn random(g: &mut Graph, shape: &[usize], seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        g.constant(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn zero_params_zero_state() {
        let (mut s, l) = build(3, 2);
        for (_, t) in s.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = random(&mut g, &[1, 3], 1);
        let z = g.constant(Tensor::zeros(&[1, 2]));
        let (h, c) = l.step(&mut g, &s, x, z, z).unwrap();
        assert_eq!(g.data(h), &[0.0, 0.0]);
        assert_eq!(g.data(c), &[0.0, 0.0]);
    }

    #[test]
    fn cell_state_bounded() {
        let (s, l) = build(3, 4);
        let mut g = Graph::new();
        let x = random(&mut g, &[5, 3], 2);
        let h = random(&mut g, &[5, 4], 3);
        let c = random(&mut g, &[5, 4], 4);
        let (_, c2) = l.step(&mut g, &s, x, h, c).unwrap();
        for (a, b) in g.data(c2).iter().zip(g.data(c)) {
            assert!(a.abs() <= b.abs() + 1.0);
        }
    }

    #[test]
    fn sequence_equals_repeated_steps() {
        let (s, l) = build(2, 3);
        let mut g = Graph::new();
        let x = random(&mut g, &[2, 4, 2], 5);
        let h0 = random(&mut g, &[2, 3], 6);
        let c0 = random(&mut g, &[2, 3], 7);
        let (out, hn, _) = l.sequence(&mut g, &s, x, h0, c0).unwrap();
        let (mut h, mut c) = (h0, c0);
        for t in 0..4 {
            let xt = g.narrow(x, 1, t, 1).unwrap();
            let xt = g.reshape(xt, &[2, 2]).unwrap();
            (h, c) = l.step(&mut g, &s, xt, h, c).unwrap();
            let seq_t = g.narrow(out, 1, t, 1).unwrap();
            assert_eq!(g.data(seq_t), g.data(h));
        }
        assert_eq!(g.data(hn), g.data(h));
    }

    #[test]
    fn gradient_check() {
        let (s, l) = build(2, 3);
        let err = check_params(&s, 32, |g, p| {
            let x = random(g, &[2, 3, 2], 8);
            let h0 = g.constant(Tensor::zeros(&[2, 3]));
            let (out, _, c) = l.sequence(g, p, x, h0, h0)?;
            let w = random(g, &[2, 3, 3], 9);
            let prod = g.mul(out, w)?;
            let a = g.sum(prod, &[0, 1, 2])?;
            let b = g.sum(c, &[0, 1])?;
            g.add(a, b)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
