//! Losses, metrics, the Adam optimizer, gradient clipping and the training
//! loops for the weather codec and the forecaster.

mod metrics;
mod tft;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::ParamStore;
use crate::seed;
use crate::tensor::{Graph, Tensor, Var};
use crate::wx::{normalize_grid, solve_geometry_layers, WeatherGrid, WxCodec};

pub use metrics::{baseline_persistence, evaluate, mae, mse, pinball_loss, CellMetrics, Forecasts, MetricsReport};
pub use tft::{
    forecast_samples, forecast_with_sets, pinball_over, select_k, split_samples, train_tft, KSearch, SampleSplit,
    TftRun,
};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Global gradient norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Caps the batches drawn per epoch; `None` uses every sample.
    pub max_batches: Option<usize>,
    /// Learning rate factor applied after every epoch; 1 keeps it fixed.
    #[serde(default = "no_decay")]
    pub lr_decay: f64,
    /// Decay of an exponential moving average of the weights, updated after
    /// every step. When positive, validation and the returned parameters use
    /// the average; 0 turns it off.
    #[serde(default)]
    pub ema: f64,
}

fn no_decay() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 5,
            val_fraction: 0.1,
            seed: 0,
            clip_norm: 1.0,
            max_batches: None,
            lr_decay: 1.0,
            ema: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.patience > 0
            && self.val_fraction > 0.0
            && self.val_fraction < 1.0
            && self.clip_norm >= 0.0
            && self.max_batches != Some(0)
            && self.lr_decay > 0.0
            && (0.0..1.0).contains(&self.ema)
            && self.lr_decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training config {self:?}")))
        }
    }
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of a single parameter slice.
    pub fn update(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64) -> Result<()> {
        if params.len() != grads.len() || m.len() != params.len() || v.len() != params.len() {
            return Err(Error::LengthMismatch(params.len(), grads.len()));
        }
        let t = step as f64;
        let c1 = 1.0 - math::powf(self.beta1, t);
        let c2 = 1.0 - math::powf(self.beta2, t);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            params[i] -= self.lr * mh / (math::sqrt(vh) + self.eps);
        }
        Ok(())
    }

    /// Applies the stored gradients of every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::LengthMismatch(store.len(), self.m.len()));
        }
        self.step += 1;
        let step = self.step;
        let mut m = core::mem::take(&mut self.m);
        let mut v = core::mem::take(&mut self.v);
        let mut result = Ok(());
        for (i, (_, t)) in store.iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            if let Err(e) = self.update(t.data_mut(), &grad, &mut m[i], &mut v[i], step) {
                result = Err(e);
                break;
            }
        }
        self.m = m;
        self.v = v;
        result
    }
}

/// Global L2 norm of the stored gradients.
pub fn grad_norm(store: &ParamStore) -> f64 {
    let sq: f64 = store
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    math::sqrt(sq)
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in store.iter_mut() {
            if let Some(g) = t.grad().map(|g| g.iter().map(|x| x * s).collect::<Vec<_>>()) {
                t.zero_grad();
                t.accumulate_grad(&g).expect("same length");
            }
        }
    }
    norm
}

/// Mean pinball loss recorded on a graph. `pred` is `[.., Q]`, `target`
/// broadcasts against `[.., 1]`.
pub fn pinball_graph(g: &mut Graph, pred: Var, target: Var, quantiles: &[f64]) -> Result<Var> {
    let q = *g.shape(pred).last().ok_or(Error::Empty("prediction"))?;
    if q != quantiles.len() {
        return Err(Error::LengthMismatch(q, quantiles.len()));
    }
    let diff = g.sub(target, pred)?;
    let n = g.value(diff).len();
    let factors: Vec<f64> = (0..n).map(|i| quantiles[i % q]).collect();
    let lin = g.mul_const(diff, factors)?;
    let neg = g.scale(diff, -1.0);
    let hinge = g.relu(neg);
    let total = g.add(lin, hinge)?;
    Ok(g.mean_all(total))
}

/// Mean squared error recorded on a graph.
pub fn mse_graph(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean_all(sq))
}

/// Per-epoch losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mini-batch loop with Adam, clipping and early stopping. `batch_loss`
/// records the loss of the given training indices on a training graph;
/// `val_loss` scores the current parameters. The best-validation
/// parameters are restored at the end.
pub fn fit<B, V>(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    n_train: usize,
    mut batch_loss: B,
    mut val_loss: V,
) -> Result<History>
where
    B: FnMut(&mut Graph, &ParamStore, &[usize]) -> Result<Var>,
    V: FnMut(&ParamStore) -> Result<f64>,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut adam = Adam::new(store, cfg);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut shuffle = seed::rng(cfg.seed, "shuffle");
    let mut history = History::default();
    let mut best = (f64::INFINITY, store.clone());
    // Bias-corrected running average: `sum` starts at zero and `avg` is the
    // corrected estimate.
    let mut average = (cfg.ema > 0.0).then(|| {
        let mut sum = store.clone();
        sum.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.0));
        (sum, store.clone())
    });
    let mut stale = 0;
    let mut batch_no = 0u64;
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr * math::powf(cfg.lr_decay, epoch as f64);
        order.shuffle(&mut shuffle);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.max_batches {
            batches.truncate(cap);
        }
        let mut sum = 0.0;
        for batch in &batches {
            let mut g = Graph::training(seed::derive(cfg.seed, &format!("dropout/{batch_no}")));
            batch_no += 1;
            let loss = batch_loss(&mut g, store, batch)?;
            let value = g.data(loss)[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value} in epoch {epoch}")));
            }
            sum += value;
            g.backward(loss)?;
            store.zero_grads();
            store.absorb_grads(&g)?;
            clip_grad_norm(store, cfg.clip_norm);
            adam.step(store)?;
            if let Some((sum, avg)) = average.as_mut() {
                let weight = 1.0 - math::powf(cfg.ema, adam.steps() as f64);
                for (((_, s), (_, a)), (_, p)) in sum.iter_mut().zip(avg.iter_mut()).zip(store.iter()) {
                    for ((s, a), p) in s.data_mut().iter_mut().zip(a.data_mut()).zip(p.data()) {
                        *s = cfg.ema * *s + (1.0 - cfg.ema) * p;
                        *a = *s / weight;
                    }
                }
            }
        }
        store.zero_grads();
        let scored = average.as_ref().map_or(&*store, |(_, avg)| avg);
        let val = val_loss(scored)?;
        if !val.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {val} in epoch {epoch}")));
        }
        history.train_loss.push(sum / batches.len() as f64);
        history.val_loss.push(val);
        if val < best.0 {
            best = (val, scored.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *store = best.1;
    Ok(history)
}

/// Stacks normalized grids into `[B, H, W, 2]`.
pub fn grid_batch(grids: &[&WeatherGrid]) -> Result<Tensor> {
    let first = grids.first().ok_or(Error::Empty("grid batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(grids.len() * h * w * 2);
    for g in grids {
        if (g.height(), g.width()) != (h, w) {
            return Err(Error::GeometryMismatch {
                expected: vec![h, w],
                actual: vec![g.height(), g.width()],
            });
        }
        data.extend(normalize_grid(g).into_data());
    }
    Tensor::new(vec![grids.len(), h, w, 2], data)
}

/// Mean reconstruction mse of the codec over `grids`, in batches.
pub fn codec_loss(codec: &WxCodec, store: &ParamStore, grids: &[&WeatherGrid], batch: usize) -> Result<f64> {
    let first = grids.first().ok_or(Error::Empty("grids"))?;
    let geom = solve_geometry_layers(first.height(), first.width(), codec.layers())?;
    let mut total = 0.0;
    for chunk in grids.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let x = g.constant(grid_batch(chunk)?);
        let (block, _) = codec.encode(&mut g, store, x)?;
        let y = codec.decode(&mut g, store, block, &geom)?;
        let l = mse_graph(&mut g, y, x)?;
        total += g.data(l)[0] * chunk.len() as f64;
    }
    Ok(total / grids.len() as f64)
}

/// Trains the codec to reproduce normalized grids. The last
/// `val_fraction` of the grids (in time order) is held out for early
/// stopping.
pub fn train_autoencoder(
    codec: &WxCodec,
    store: &mut ParamStore,
    grids: &[WeatherGrid],
    cfg: &TrainConfig,
) -> Result<History> {
    if grids.len() < 2 {
        return Err(Error::Empty("need at least two grids"));
    }
    let n_val = (math::ceil(grids.len() as f64 * cfg.val_fraction) as usize).clamp(1, grids.len() - 1);
    let (train, val) = grids.split_at(grids.len() - n_val);
    let geom = solve_geometry_layers(train[0].height(), train[0].width(), codec.layers())?;
    let val_refs: Vec<&WeatherGrid> = val.iter().collect();
    fit(
        store,
        cfg,
        train.len(),
        |g, p, idx| {
            let batch: Vec<&WeatherGrid> = idx.iter().map(|&i| &train[i]).collect();
            let x = g.constant(grid_batch(&batch)?);
            let (block, _) = codec.encode(g, p, x)?;
            let y = codec.decode(g, p, block, &geom)?;
            mse_graph(g, y, x)
        },
        |p| codec_loss(codec, p, &val_refs, cfg.batch_size),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        s.get_mut(id).accumulate_grad(&[0.3, -5.0, 1e-3]).unwrap();
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&s, &cfg);
        adam.step(&mut s).unwrap();
        let moved: Vec<f64> = s
            .get(id)
            .data()
            .iter()
            .zip([1.0, -2.0, 0.5])
            .map(|(a, b)| a - b)
            .collect();
        for (d, g) in moved.iter().zip([0.3, -5.0, 1e-3]) {
            assert!(d.abs() >= 0.9 * cfg.lr && d.abs() <= cfg.lr, "{d}");
            assert!(d.signum() == -f64::signum(g));
        }
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        s.get_mut(id).accumulate_grad(&[0.0, 0.0]).unwrap();
        let mut adam = Adam::new(&s, &TrainConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &[1.0, 2.0]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::from_vec(vec![0.0])).unwrap();
        let b = s.add("b", Tensor::from_vec(vec![0.0])).unwrap();
        s.get_mut(a).accumulate_grad(&[3.0]).unwrap();
        s.get_mut(b).accumulate_grad(&[4.0]).unwrap();
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((grad_norm(&s) - 1.0).abs() < 1e-12);
        assert!((s.get(a).grad().unwrap()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn pinball_graph_matches_scalar() {
        let mut g = Graph::new();
        let pred = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
        let y = g.constant(Tensor::new(vec![2, 1], vec![2.0, -1.0]).unwrap());
        let qs = [0.25, 0.5, 0.75];
        let l = pinball_graph(&mut g, pred, y, &qs).unwrap();
        let mut expect = 0.0;
        for (row, yy) in [[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]].iter().zip([2.0, -1.0]) {
            for (p, q) in row.iter().zip(qs) {
                expect += pinball_loss(yy, *p, q);
            }
        }
        assert!((g.data(l)[0] - expect / 6.0).abs() < 1e-12);
    }

    #[test]
    fn weight_average_is_bias_corrected() {
        use core::cell::RefCell;
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(vec![0.0]).with_requires_grad(true))
            .unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 1,
            lr: 0.1,
            patience: 10,
            ema: 0.5,
            ..TrainConfig::default()
        };
        let (raw, avg) = (RefCell::new(Vec::new()), RefCell::new(Vec::new()));
        fit(
            &mut s,
            &cfg,
            1,
            |g, p, _| {
                raw.borrow_mut().push(p.by_name("w")?.data()[0]);
                let w = p.bind(g, p.id("w").unwrap());
                let target = g.constant(Tensor::from_vec(vec![3.0]));
                mse_graph(g, w, target)
            },
            |p| {
                let w = p.by_name("w")?.data()[0];
                avg.borrow_mut().push(w);
                Ok((w - 3.0) * (w - 3.0))
            },
        )
        .unwrap();
        // raw[e] holds the weights before step e+1.
        let (raw, avg) = (raw.into_inner(), avg.into_inner());
        assert_eq!(avg[0], raw[1]);
        assert!((avg[1] - (raw[1] + 2.0 * raw[2]) / 3.0).abs() < 1e-12);
        assert_eq!(s.by_name("w").unwrap().data()[0], avg[2]);
        assert!(TrainConfig {
            ema: 1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
