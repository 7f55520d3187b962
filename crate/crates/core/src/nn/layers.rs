use super::{Builder, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Affine map over the last axis. A grouped layer holds one matrix per group
/// and maps `[.., G, d_in]` to `[.., G, d_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    groups: Option<usize>,
    d_in: usize,
    d_out: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, w_name: &str, b_name: Option<&str>, d_in: usize, d_out: usize) -> Result<Self> {
        let w = b.uniform(w_name, &[d_in, d_out], d_in)?;
        let bias = b_name.map(|n| b.zeros(n, &[d_out])).transpose()?;
        Ok(Self {
            w,
            b: bias,
            groups: None,
            d_in,
            d_out,
        })
    }

    pub fn grouped(
        b: &mut Builder<'_>,
        w_name: &str,
        b_name: Option<&str>,
        groups: usize,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        let w = b.uniform(w_name, &[groups, d_in, d_out], d_in)?;
        let bias = b_name.map(|n| b.zeros(n, &[groups, d_out])).transpose()?;
        Ok(Self {
            w,
            b: bias,
            groups: Some(groups),
            d_in,
            d_out,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let w = p.bind(g, self.w);
        let y = match self.groups {
            None => g.matmul(x, w)?,
            Some(_) => g.matmul_grouped(x, w)?,
        };
        match self.b {
            Some(b) => {
                let b = p.bind(g, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Lookup table of learned category vectors.
#[derive(Debug, Clone)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    d: usize,
}

impl Embedding {
    pub fn new(b: &mut Builder<'_>, rows: usize, d: usize) -> Result<Self> {
        let table = b.uniform("table", &[rows, d], 1)?;
        Ok(Self { table, rows, d })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `[ids.len(), d]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, ids: &[usize]) -> Result<Var> {
        let t = p.bind(g, self.table);
        g.gather_rows(t, ids)
    }
}

/// Gated linear unit: `σ(W₁x + b₁) ⊙ (W₂x + b₂)`.
#[derive(Debug, Clone)]
pub struct Glu {
    gate: Linear,
    value: Linear,
}

impl Glu {
    pub fn new(b: &mut Builder<'_>, d_in: usize, d_out: usize, groups: Option<usize>) -> Result<Self> {
        let (gate, value) = match groups {
            None => (
                Linear::new(b, "W1", Some("b1"), d_in, d_out)?,
                Linear::new(b, "W2", Some("b2"), d_in, d_out)?,
            ),
            Some(n) => (
                Linear::grouped(b, "W1", Some("b1"), n, d_in, d_out)?,
                Linear::grouped(b, "W2", Some("b2"), n, d_in, d_out)?,
            ),
        };
        Ok(Self { gate, value })
    }

    pub fn gate(&self) -> &Linear {
        &self.gate
    }

    pub fn value(&self) -> &Linear {
        &self.value
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let a = self.gate.forward(g, p, x)?;
        let s = g.sigmoid(a);
        let v = self.value.forward(g, p, x)?;
        g.mul(s, v)
    }
}

fn norm(b: &mut Builder<'_>, shape: &[usize]) -> Result<(ParamId, ParamId)> {
    let mut ln = b.sub("ln");
    Ok((ln.constant("gain", shape, 1.0)?, ln.zeros("bias", shape)?))
}

/// Gated residual network:
/// `LayerNorm(skip(x) + GLU(W₁·ELU(W₂x + W₃c + b₂) + b₁))`.
///
/// `skip` is the identity when `d_in == d_out`, otherwise a bias-free
/// projection. The optional context is added through the bias-free `W₃` and
/// must broadcast against `W₂x`.
#[derive(Debug, Clone)]
pub struct Grn {
    w2: Linear,
    w3: Option<Linear>,
    w1: Linear,
    glu: Glu,
    skip: Option<Linear>,
    gain: ParamId,
    bias: ParamId,
    dropout: f64,
    d_out: usize,
}

impl Grn {
    pub fn new(
        b: &mut Builder<'_>,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        d_context: Option<usize>,
        dropout: f64,
    ) -> Result<Self> {
        check_rate(dropout)?;
        let w2 = Linear::new(b, "W2", Some("b2"), d_in, d_hidden)?;
        let w3 = d_context
            .map(|dc| Linear::new(b, "W3", None, dc, d_hidden))
            .transpose()?;
        let w1 = Linear::new(b, "W1", Some("b1"), d_hidden, d_hidden)?;
        let glu = Glu::new(&mut b.sub("glu"), d_hidden, d_out, None)?;
        let skip = (d_in != d_out)
            .then(|| Linear::new(b, "skip", None, d_in, d_out))
            .transpose()?;
        let (gain, bias) = norm(b, &[d_out])?;
        Ok(Self {
            w2,
            w3,
            w1,
            glu,
            skip,
            gain,
            bias,
            dropout,
            d_out,
        })
    }

    /// `groups` independent square GRNs of width `d` applied to `[.., G, d]`.
    pub fn grouped(b: &mut Builder<'_>, groups: usize, d: usize, dropout: f64) -> Result<Self> {
        check_rate(dropout)?;
        let w2 = Linear::grouped(b, "W2", Some("b2"), groups, d, d)?;
        let w1 = Linear::grouped(b, "W1", Some("b1"), groups, d, d)?;
        let glu = Glu::new(&mut b.sub("glu"), d, d, Some(groups))?;
        let (gain, bias) = norm(b, &[groups, d])?;
        Ok(Self {
            w2,
            w3: None,
            w1,
            glu,
            skip: None,
            gain,
            bias,
            dropout,
            d_out: d,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn context_weight(&self) -> Option<ParamId> {
        self.w3.as_ref().map(Linear::weight)
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, context: Option<Var>) -> Result<Var> {
        let mut a = self.w2.forward(g, p, x)?;
        match (context, &self.w3) {
            (Some(c), Some(w3)) => {
                let cc = w3.forward(g, p, c)?;
                a = g.add(a, cc)?;
            }
            (Some(_), None) => {
                return Err(Error::InvalidConfig(
                    "context supplied to a GRN built without one".into(),
                ))
            }
            _ => {}
        }
        let eta2 = g.elu(a);
        let eta1 = self.w1.forward(g, p, eta2)?;
        let eta1 = g.dropout(eta1, self.dropout)?;
        let gated = self.glu.forward(g, p, eta1)?;
        let residual = match &self.skip {
            Some(s) => s.forward(g, p, x)?,
            None => x,
        };
        let sum = g.add(residual, gated)?;
        layer_norm_last(g, p, sum, self.gain, self.bias)
    }
}

fn layer_norm_last(g: &mut Graph, p: &ParamStore, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
    let axis = g.shape(x).len() - 1;
    let gv = p.bind(g, gain);
    let bv = p.bind(g, bias);
    g.layer_norm(x, axis, gv, bv)
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!(
            "dropout rate {rate} outside [0,1)"
        )))
    }
}

/// `LayerNorm(skip + GLU(dropout(x)))`, the gated skip connection.
#[derive(Debug, Clone)]
pub struct GateAddNorm {
    glu: Glu,
    gain: ParamId,
    bias: ParamId,
    dropout: f64,
}

impl GateAddNorm {
    pub fn new(b: &mut Builder<'_>, d_in: usize, d: usize, dropout: f64) -> Result<Self> {
        check_rate(dropout)?;
        let glu = Glu::new(&mut b.sub("glu"), d_in, d, None)?;
        let (gain, bias) = norm(b, &[d])?;
        Ok(Self {
            glu,
            gain,
            bias,
            dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, skip: Var) -> Result<Var> {
        let x = g.dropout(x, self.dropout)?;
        let gated = self.glu.forward(g, p, x)?;
        let sum = g.add(skip, gated)?;
        layer_norm_last(g, p, sum, self.gain, self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_params;
    use crate::tensor::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with<T>(build: impl FnOnce(&mut Builder<'_>) -> T) -> (ParamStore, T) {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block = build(&mut Builder::new(&mut s, &mut rng, "t"));
        (s, block)
    }

    fn input(g: &mut Graph, shape: &[usize], seed: u64) -> Var {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        g.constant(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let (mut s, lin) = store_with(|b| Linear::new(b, "W", Some("b"), 3, 3).unwrap());
        s.set("t.W", &[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let y = lin.forward(&mut g, &s, x).unwrap();
        assert_eq!(g.data(y), &[1.0, -2.0, 0.5]);
        s.set("t.W", &[3, 3], vec![0.0; 9]).unwrap();
        s.set("t.b", &[3], vec![0.1, 0.2, 0.3]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3], 5.0));
        let y = lin.forward(&mut g, &s, x).unwrap();
        assert_eq!(g.data(y), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn glu_zero_params_and_suppression() {
        let (mut s, glu) = store_with(|b| Glu::new(b, 3, 2, None).unwrap());
        for (_, t) in s.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = input(&mut g, &[3], 1);
        let y = glu.forward(&mut g, &s, x).unwrap();
        assert_eq!(g.data(y), &[0.0, 0.0]);

        let (mut s, glu) = store_with(|b| Glu::new(b, 3, 2, None).unwrap());
        s.set("t.W1", &[3, 2], vec![0.0; 6]).unwrap();
        s.set("t.b1", &[2], vec![-30.0; 2]).unwrap();
        let mut g = Graph::new();
        let x = input(&mut g, &[3], 2);
        let y = glu.forward(&mut g, &s, x).unwrap();
        let lin = glu.value().forward(&mut g, &s, x).unwrap();
        for (o, l) in g.data(y).iter().zip(g.data(lin)) {
            assert!(o.abs() < 1e-10 * l.abs());
        }
    }

    #[test]
    fn grn_shape_and_missing_context_equals_zero_context() {
        let (s, grn) = store_with(|b| Grn::new(b, 5, 4, 3, Some(4), 0.0).unwrap());
        let mut g = Graph::new();
        let x = input(&mut g, &[2, 5], 3);
        let c = g.constant(Tensor::zeros(&[1, 4]));
        let with = grn.forward(&mut g, &s, x, Some(c)).unwrap();
        assert_eq!(g.shape(with), &[2, 3]);
        let without = grn.forward(&mut g, &s, x, None).unwrap();
        assert_eq!(g.data(with), g.data(without));
    }

    #[test]
    fn block_gradients() {
        let (s, glu) = store_with(|b| Glu::new(b, 3, 2, None).unwrap());
        let err = check_params(&s, 64, |g, p| {
            let x = input(g, &[2, 3], 5);
            let y = glu.forward(g, p, x)?;
            let sq = g.mul(y, y)?;
            g.sum(sq, &[0, 1])
        })
        .unwrap();
        assert!(err < 1e-4, "glu {err}");

        let (s, grn) = store_with(|b| Grn::new(b, 3, 4, 2, Some(2), 0.0).unwrap());
        let err = check_params(&s, 64, |g, p| {
            let x = input(g, &[2, 3], 6);
            let c = input(g, &[1, 2], 7);
            let y = grn.forward(g, p, x, Some(c))?;
            let w = input(g, &[2, 2], 8);
            let prod = g.mul(y, w)?;
            g.sum(prod, &[0, 1])
        })
        .unwrap();
        assert!(err < 1e-4, "grn {err}");

        let (s, grn) = store_with(|b| Grn::grouped(b, 3, 2, 0.0).unwrap());
        let err = check_params(&s, 64, |g, p| {
            let x = input(g, &[2, 3, 2], 9);
            let y = grn.forward(g, p, x, None)?;
            let w = input(g, &[2, 3, 2], 10);
            let prod = g.mul(y, w)?;
            g.sum(prod, &[0, 1, 2])
        })
        .unwrap();
        assert!(err < 1e-4, "grouped grn {err}");
    }

    #[test]
    fn embedding_gradient_touches_one_row() {
        let (mut s, emb) = store_with(|b| Embedding::new(b, 4, 3).unwrap());
        let mut g = Graph::new();
        let r = emb.forward(&mut g, &s, &[2]).unwrap();
        let l = g.sum(r, &[0, 1]).unwrap();
        g.backward(l).unwrap();
        s.absorb_grads(&g).unwrap();
        let grad = s.by_name("t.table").unwrap().grad().unwrap();
        assert_eq!(grad, &[0., 0., 0., 0., 0., 0., 1., 1., 1., 0., 0., 0.]);
    }
}
