use alloc::vec::Vec;

use super::{Builder, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Graph, Var};

/// Square attention mask; `allowed(q, k)` says whether query `q` may see key `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Each position sees itself and everything before it.
    pub fn causal(len: usize) -> Self {
        let allowed = (0..len * len).map(|i| i % len <= i / len).collect();
        Self { len, allowed }
    }

    /// Validates a row-major `len × len` mask. Every row needs at least one
    /// permitted key, and no key after the query may be permitted.
    pub fn new(len: usize, allowed: Vec<bool>) -> Result<Self> {
        if len == 0 || allowed.len() != len * len {
            return Err(Error::InvalidMask("mask must be square"));
        }
        for q in 0..len {
            let row = &allowed[q * len..][..len];
            if row[q + 1..].iter().any(|&a| a) {
                return Err(Error::InvalidMask("mask permits future positions"));
            }
            if !row.iter().any(|&a| a) {
                return Err(Error::InvalidMask("row without any permitted position"));
            }
        }
        Ok(Self { len, allowed })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.len + k]
    }

    fn blocked(&self) -> Vec<bool> {
        self.allowed.iter().map(|a| !a).collect()
    }
}

/// Result of [`InterpretableMha::forward`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[B, T, d]`
    pub values: Var,
    /// Per-head weights, `[B, heads, T, T]`.
    pub weights: Var,
}

/// Multi-head attention whose heads share one value projection. Head
/// outputs are averaged rather than concatenated, so the mean of the head
/// weights fully describes how positions are mixed.
#[derive(Debug, Clone)]
pub struct InterpretableMha {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    d_head: usize,
    d: usize,
}

impl InterpretableMha {
    pub fn new(b: &mut Builder<'_>, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "hidden size {d} not divisible by {heads} heads"
            )));
        }
        let d_head = d / heads;
        Ok(Self {
            wq: Linear::new(b, "Wq", None, d, heads * d_head)?,
            wk: Linear::new(b, "Wk", None, d, heads * d_head)?,
            wv: Linear::new(b, "Wv", None, d, d_head)?,
            wo: Linear::new(b, "Wo", Some("bo"), d_head, d)?,
            heads,
            d_head,
            d,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn value_projection(&self) -> &Linear {
        &self.wv
    }

    pub fn output_projection(&self) -> &Linear {
        &self.wo
    }

    fn split_heads(&self, g: &mut Graph, x: Var, batch: usize, t: usize) -> Result<Var> {
        let x = g.reshape(x, &[batch, t, self.heads, self.d_head])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    /// `queries`, `keys` and `values` are `[B, T, d]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &ParamStore,
        queries: Var,
        keys: Var,
        values: Var,
        mask: &AttentionMask,
    ) -> Result<AttentionOutput> {
        let shape = g.shape(queries).to_vec();
        if shape.len() != 3 || shape[2] != self.d || g.shape(keys) != shape || g.shape(values) != shape {
            return Err(Error::ShapeMismatch {
                op: "interpretable_mha",
                lhs: shape,
                rhs: g.shape(keys).to_vec(),
            });
        }
        let (batch, t) = (shape[0], shape[1]);
        if mask.len() != t {
            return Err(Error::InvalidMask("mask size differs from sequence length"));
        }
        let q = self.wq.forward(g, p, queries)?;
        let q = self.split_heads(g, q, batch, t)?;
        let k = self.wk.forward(g, p, keys)?;
        let k = g.reshape(k, &[batch, t, self.heads, self.d_head])?;
        let kt = g.permute(k, &[0, 2, 3, 1])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / math::sqrt(self.d_head as f64));
        let scores = g.masked_fill(scores, mask.blocked())?;
        let weights = g.softmax(scores, 3)?;
        let mean = g.mean(weights, &[1])?;
        let v = self.wv.forward(g, p, values)?;
        let mixed = g.matmul(mean, v)?;
        let out = self.wo.forward(g, p, mixed)?;
        Ok(AttentionOutput { values: out, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_params;
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(d: usize, heads: usize) -> (ParamStore, InterpretableMha) {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = InterpretableMha::new(&mut Builder::new(&mut s, &mut rng, "attn"), d, heads).unwrap();
        (s, m)
    }

    fn random_data(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn random(g: &mut Graph, shape: &[usize], seed: u64) -> Var {
        let data = random_data(shape.iter().product(), seed);
        g.constant(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn mask_validation() {
        assert!(AttentionMask::new(2, vec![true, false, true]).is_err());
        assert_eq!(
            AttentionMask::new(2, vec![true, true, true, true]),
            Err(Error::InvalidMask("mask permits future positions"))
        );
        assert_eq!(
            AttentionMask::new(2, vec![true, false, true, true]).unwrap(),
            AttentionMask::causal(2)
        );
    }

    #[test]
    fn equal_scores_give_uniform_causal_rows() {
        let (mut s, m) = build(4, 2);
        s.set("attn.Wq", &[4, 4], vec![0.0; 16]).unwrap();
        let mut g = Graph::new();
        let x = random(&mut g, &[1, 5, 4], 1);
        let out = m.forward(&mut g, &s, x, x, x, &AttentionMask::causal(5)).unwrap();
        let w = g.data(out.weights);
        for h in 0..2 {
            for q in 0..5 {
                for k in 0..5 {
                    let v = w[(h * 5 + q) * 5 + k];
                    if k <= q {
                        assert!((v - 1.0 / (q as f64 + 1.0)).abs() < 1e-15);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn single_head_matches_reference_attention() {
        let (mut s, m) = build(3, 1);
        s.set("attn.Wv", &[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        s.set("attn.Wo", &[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        let t = 4;
        let mut g = Graph::new();
        let x = random(&mut g, &[1, t, 3], 2);
        let out = m.forward(&mut g, &s, x, x, x, &AttentionMask::causal(t)).unwrap();
        let xs = g.data(x).to_vec();
        let wq = s.by_name("attn.Wq").unwrap().data().to_vec();
        let wk = s.by_name("attn.Wk").unwrap().data().to_vec();
        let proj = |w: &[f64], r: usize| -> Vec<f64> {
            (0..3)
                .map(|j| (0..3).map(|i| xs[r * 3 + i] * w[i * 3 + j]).sum())
                .collect()
        };
        for qi in 0..t {
            let q = proj(&wq, qi);
            let scores: Vec<f64> = (0..=qi)
                .map(|ki| {
                    let k = proj(&wk, ki);
                    q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / math::sqrt(3.0)
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| math::exp(s - mx)).collect();
            let z: f64 = e.iter().sum();
            for c in 0..3 {
                let expect: f64 = (0..=qi).map(|ki| e[ki] / z * xs[ki * 3 + c]).sum();
                assert!((g.data(out.values)[qi * 3 + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_outputs_ignore_later_positions() {
        let (s, m) = build(4, 2);
        let t = 6;
        let base = random_data(t * 4, 3);
        let run = |data: Vec<f64>| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![1, t, 4], data).unwrap());
            let out = m.forward(&mut g, &s, x, x, x, &AttentionMask::causal(t)).unwrap();
            g.data(out.values).to_vec()
        };
        let a = run(base.clone());
        let mut perturbed = base;
        for v in &mut perturbed[4 * 4..] {
            *v += 3.0;
        }
        let b = run(perturbed);
        assert_eq!(a[..4 * 4], b[..4 * 4]);
        assert_ne!(a[4 * 4..], b[4 * 4..]);
    }

    #[test]
    fn identical_heads_match_single_head() {
        let (s1, m1) = build(2, 1);
        let (mut s2, m2) = build(4, 2);
        // two heads whose projections both equal the single-head one
        let wq1 = s1.by_name("attn.Wq").unwrap().data().to_vec();
        let wk1 = s1.by_name("attn.Wk").unwrap().data().to_vec();
        let dup = |w: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 16];
            for i in 0..2 {
                for j in 0..2 {
                    out[i * 4 + j] = w[i * 2 + j];
                    out[i * 4 + 2 + j] = w[i * 2 + j];
                }
            }
            out
        };
        s2.set("attn.Wq", &[4, 4], dup(&wq1)).unwrap();
        s2.set("attn.Wk", &[4, 4], dup(&wk1)).unwrap();
        let mut wv = vec![0.0; 8];
        wv[..4].copy_from_slice(s1.by_name("attn.Wv").unwrap().data());
        s2.set("attn.Wv", &[4, 2], wv).unwrap();
        let x1 = random_data(3 * 2, 4);
        let mut x2 = vec![0.0; 3 * 4];
        for r in 0..3 {
            x2[r * 4..r * 4 + 2].copy_from_slice(&x1[r * 2..r * 2 + 2]);
        }
        let mut g1 = Graph::new();
        let a = g1.constant(Tensor::new(vec![1, 3, 2], x1).unwrap());
        let o1 = m1.forward(&mut g1, &s1, a, a, a, &AttentionMask::causal(3)).unwrap();
        let mut g2 = Graph::new();
        let b = g2.constant(Tensor::new(vec![1, 3, 4], x2).unwrap());
        let o2 = m2.forward(&mut g2, &s2, b, b, b, &AttentionMask::causal(3)).unwrap();
        let w1 = g1.data(o1.weights);
        let w2 = g2.data(o2.weights);
        assert_eq!(&w2[..9], w1);
        assert_eq!(&w2[9..], w1);
        let mean2 = {
            let mw = g2.mean(o2.weights, &[1]).unwrap();
            g2.data(mw).to_vec()
        };
        assert_eq!(mean2.as_slice(), w1);
    }

    #[test]
    fn gradient_check() {
        let (s, m) = build(4, 2);
        let err = check_params(&s, 16, |g, p| {
            let x = random(g, &[2, 3, 4], 5);
            let out = m.forward(g, p, x, x, x, &AttentionMask::causal(3))?;
            let w = random(g, &[2, 3, 4], 6);
            let prod = g.mul(out.values, w)?;
            g.sum(prod, &[0, 1, 2])
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
