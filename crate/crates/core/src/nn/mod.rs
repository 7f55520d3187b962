//! Parameter storage and the gated building blocks used by the forecaster.
//!
//! Blocks hold [`ParamId`]s into a [`ParamStore`] and record their forward
//! pass on a [`Graph`]. After `backward`, [`ParamStore::absorb_grads`] copies
//! the parameter gradients out of the graph so the optimizer can use them.

mod attention;
mod layers;
mod lstm;
mod vsn;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::gradcheck;
use crate::tensor::{Graph, Tensor, Var};

pub use attention::{AttentionMask, AttentionOutput, InterpretableMha};
pub use layers::{Embedding, GateAddNorm, Glu, Grn, Linear};
pub use lstm::Lstm;
pub use vsn::{Selection, VariableSelection};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push((name, value.with_requires_grad(true)));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Overwrites the values of `name`; the shape must match.
    pub fn set(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParam(name.into()))?;
        let t = self.get_mut(id);
        if t.shape() != shape || t.len() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "param load",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        t.data_mut().copy_from_slice(&data);
        Ok(())
    }

    /// Copies every value from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in other.iter() {
            self.set(name, t.shape(), t.data().to_vec())?;
        }
        Ok(())
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                t.set_requires_grad(trainable);
            }
        }
    }

    /// Binds a parameter into `g`.
    pub fn bind(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(id.0, self.get(id))
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Adds the gradients collected by `g` into the stored parameters.
    pub fn absorb_grads(&mut self, g: &Graph) -> Result<()> {
        for (id, v) in g.param_bindings() {
            if let Some(grad) = g.grad(v) {
                self.entries[id].1.accumulate_grad(grad)?;
            }
        }
        Ok(())
    }
}

/// Creates parameters under a dotted name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, prefix: &str) -> Self {
        Self {
            store,
            rng,
            prefix: prefix.into(),
        }
    }

    /// Builder whose names gain `.name`.
    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.into()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.into()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) weights.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.uniform_bound(name, shape, 1.0 / math::sqrt(fan_in.max(1) as f64))
    }

    /// Uniform(−bound, bound) weights.
    pub fn uniform_bound(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| (self.rng.random::<f64>() * 2.0 - 1.0) * bound).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        let full = self.full_name(name);
        self.store.add(full, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.constant(name, shape, 0.0)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let t = Tensor::new(shape.to_vec(), vec![value; shape.iter().product()])?;
        let full = self.full_name(name);
        self.store.add(full, t)
    }
}

/// Worst relative error between backward and central differences over the
/// parameters of `store`, checking at most `per_tensor` coordinates of each
/// tensor (spread evenly).
pub fn check_params<F>(store: &ParamStore, per_tensor: usize, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    let mut analytic_store = store.clone();
    analytic_store.zero_grads();
    analytic_store.absorb_grads(&g)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe = store.clone();
    for (pi, (_, t)) in store.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let n = t.len();
        let step = (n / per_tensor.max(1)).max(1);
        let grad = analytic_store.entries[pi]
            .1
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or(vec![0.0; n]);
        for c in (0..n).step_by(step) {
            let orig = t.data()[c];
            let mut value = [orig];
            let num = gradcheck::numeric_grad(&mut value, |v| {
                probe.entries[pi].1.data_mut()[c] = v[0];
                let mut g = Graph::new();
                let l = f(&mut g, &probe)?;
                Ok(g.data(l)[0])
            })?;
            probe.entries[pi].1.data_mut()[c] = orig;
            analytic.push(grad[c]);
            numeric.push(num[0]);
        }
    }
    Ok(gradcheck::relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[1])).unwrap();
        assert_eq!(s.add("a", Tensor::zeros(&[1])), Err(Error::DuplicateParam("a".into())));
    }

    #[test]
    fn builder_prefixes_and_bounds() {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = Builder::new(&mut s, &mut rng, "tft");
        let mut enc = b.sub("encoder");
        let id = enc.uniform("W1", &[4, 3], 4).unwrap();
        assert_eq!(s.name(id), "tft.encoder.W1");
        assert!(s.get(id).data().iter().all(|v| v.abs() <= 0.5));
    }
}
