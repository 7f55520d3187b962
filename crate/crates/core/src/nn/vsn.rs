use alloc::vec::Vec;

use super::{Builder, Grn, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Variable selection network. Softmax weights come from a GRN over the
/// flattened variables; each variable also passes through its own GRN and the
/// results are mixed with those weights.
#[derive(Debug, Clone)]
pub struct VariableSelection {
    /// Absent for a single variable, whose weight is always 1.
    flat: Option<Grn>,
    per_var: Grn,
    n_vars: usize,
    d: usize,
}

/// Output of [`VariableSelection::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Selection {
    /// `[.., d]`
    pub combined: Var,
    /// `[.., n_vars]`
    pub weights: Var,
}

impl VariableSelection {
    pub fn new(b: &mut Builder<'_>, n_vars: usize, d: usize, d_context: Option<usize>, dropout: f64) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::Empty("variable selection inputs"));
        }
        let flat = (n_vars > 1)
            .then(|| Grn::new(&mut b.sub("flat"), n_vars * d, d, n_vars, d_context, dropout))
            .transpose()?;
        let per_var = Grn::grouped(&mut b.sub("vars"), n_vars, d, dropout)?;
        Ok(Self {
            flat,
            per_var,
            n_vars,
            d,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// `vars` is `[.., n_vars, d]`; the context must broadcast against `[.., d]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, vars: Var, context: Option<Var>) -> Result<Selection> {
        let shape = g.shape(vars).to_vec();
        let r = shape.len();
        if r < 2 || shape[r - 2] != self.n_vars || shape[r - 1] != self.d {
            return Err(Error::ShapeMismatch {
                op: "variable_selection",
                lhs: shape,
                rhs: alloc::vec![self.n_vars, self.d],
            });
        }
        let lead = &shape[..r - 2];
        let mut flat_shape: Vec<usize> = lead.to_vec();
        flat_shape.push(self.n_vars * self.d);
        let weights = match &self.flat {
            Some(grn) => {
                let flat = g.reshape(vars, &flat_shape)?;
                let logits = grn.forward(g, p, flat, context)?;
                g.softmax(logits, r - 2)?
            }
            None => {
                let mut w_shape = lead.to_vec();
                w_shape.push(1);
                g.constant(crate::tensor::Tensor::full(&w_shape, 1.0))
            }
        };
        let processed = self.per_var.forward(g, p, vars, None)?;
        let mut row_shape: Vec<usize> = lead.to_vec();
        row_shape.extend([1, self.n_vars]);
        let w_row = g.reshape(weights, &row_shape)?;
        let mixed = g.matmul(w_row, processed)?;
        let mut out_shape: Vec<usize> = lead.to_vec();
        out_shape.push(self.d);
        let combined = g.reshape(mixed, &out_shape)?;
        Ok(Selection { combined, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_params;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(n: usize, d: usize, ctx: Option<usize>) -> (ParamStore, VariableSelection) {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = VariableSelection::new(&mut Builder::new(&mut s, &mut rng, "vsn"), n, d, ctx, 0.0).unwrap();
        (s, v)
    }

    fn random(g: &mut Graph, shape: &[usize], seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        g.constant(Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn single_variable_weight_is_one() {
        let (s, v) = build(1, 3, None);
        let mut g = Graph::new();
        let x = random(&mut g, &[4, 1, 3], 1);
        let sel = v.forward(&mut g, &s, x, None).unwrap();
        assert!(g.data(sel.weights).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn weights_on_simplex_and_combined_matches_loop() {
        let (s, v) = build(3, 4, Some(4));
        let mut g = Graph::new();
        let x = random(&mut g, &[2, 5, 3, 4], 2);
        let c = random(&mut g, &[2, 1, 4], 3);
        let sel = v.forward(&mut g, &s, x, Some(c)).unwrap();
        assert_eq!(g.shape(sel.weights), &[2, 5, 3]);
        assert_eq!(g.shape(sel.combined), &[2, 5, 4]);
        let w = g.data(sel.weights).to_vec();
        for row in w.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        let processed = v.per_var.forward(&mut g, &s, x, None).unwrap();
        let pd = g.data(processed);
        let comb = g.data(sel.combined);
        for pos in 0..10 {
            for k in 0..4 {
                let expect: f64 = (0..3).map(|j| w[pos * 3 + j] * pd[(pos * 3 + j) * 4 + k]).sum();
                assert!((comb[pos * 4 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_check() {
        let (s, v) = build(3, 2, Some(2));
        let err = check_params(&s, 24, |g, p| {
            let x = random(g, &[2, 3, 2], 4);
            let c = random(g, &[2, 2], 5);
            let sel = v.forward(g, p, x, Some(c))?;
            let w = random(g, &[2, 2], 6);
            let prod = g.mul(sel.combined, w)?;
            let a = g.sum(prod, &[0, 1])?;
            let u = random(g, &[2, 3], 7);
            let wp = g.mul(sel.weights, u)?;
            let b = g.sum(wp, &[0, 1])?;
            g.add(a, b)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
