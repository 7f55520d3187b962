//! Central finite-difference gradient checks.

use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;

pub const STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖ + ‖n‖, tiny)`, the error measure used by the checks.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = (math::sqrt(na) + math::sqrt(nn)).max(1e-12);
    math::sqrt(diff) / denom
}

/// Central differences of `eval` with respect to every entry of `values`.
pub fn numeric_grad(values: &mut [f64], mut eval: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + STEP;
        let up = eval(values)?;
        values[i] = orig - STEP;
        let down = eval(values)?;
        values[i] = orig;
        out.push((up - down) / (2.0 * STEP));
    }
    Ok(out)
}

fn run<F>(inputs: &[Tensor], f: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(Error::NonScalarLoss(g.shape(loss).to_vec()));
    }
    Ok((g, vars, loss))
}

/// Worst relative error over all `inputs` between backward and central
/// differences of the scalar built by `f`.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, loss) = run(inputs, &f)?;
    g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (idx, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| alloc::vec![0.0; inputs[idx].len()]);
        let mut probe: Vec<Tensor> = inputs.to_vec();
        let mut values = probe[idx].data().to_vec();
        let numeric = numeric_grad(&mut values, |vals| {
            probe[idx].data_mut().copy_from_slice(vals);
            let (g, _, loss) = run(&probe, &f)?;
            Ok(g.data(loss)[0])
        })?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_gradient() {
        let x = Tensor::new(alloc::vec![3], alloc::vec![0.3, -0.7, 1.1]).unwrap();
        let err = check(&[x], |g, v| {
            let t = g.tanh(v[0]);
            let s = g.mul(t, v[0])?;
            g.sum(s, &[0])
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn relative_error_of_equal_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
