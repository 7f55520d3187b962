use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{baseline_persistence, evaluate, fit, Forecasts, History, MetricsReport, TrainConfig};
use crate::error::{Error, Result};
use crate::formulation::{EncodedSample, ForecastSample, NormStats, Panel};
use crate::math;
use crate::nn::ParamStore;
use crate::tensor::Graph;
use crate::tft::{denormalize, Batch, ForecastSet, Tft, TftConfig};

/// Validation samples scored per epoch at most; larger sets are thinned
/// evenly.
const MAX_VAL_SAMPLES: usize = 2048;

/// A trained forecaster with everything needed to reuse it.
#[derive(Debug, Clone)]
pub struct TftRun {
    pub model: Tft,
    pub params: ParamStore,
    pub stats: NormStats,
    pub history: History,
    pub report: MetricsReport,
    pub test: Forecasts,
    pub test_samples: Vec<ForecastSample>,
}

/// Training, validation and test windows of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSplit {
    pub train: Vec<ForecastSample>,
    pub val: Vec<ForecastSample>,
    pub test: Vec<ForecastSample>,
}

/// Temporal train/validation/test windows. Test labels start at `t_split`.
/// Validation takes the latest `val_fraction` of the pre-split anchors;
/// training windows end before the first validation label.
pub fn split_samples(panel: &Panel, k: usize, tau: usize, t_split: usize, val_fraction: f64) -> Result<SampleSplit> {
    let all = panel.windows(k, tau)?;
    let split = panel.temporal_split(&all, tau, t_split)?;
    let mut anchors: Vec<usize> = split.train.iter().map(|s| s.anchor).collect();
    anchors.sort_unstable();
    anchors.dedup();
    if anchors.len() < 2 {
        return Err(Error::Empty("training samples"));
    }
    let n_val = (math::ceil(anchors.len() as f64 * val_fraction) as usize).clamp(1, anchors.len() - 1);
    let cutoff = anchors[anchors.len() - n_val];
    let train: Vec<ForecastSample> = split
        .train
        .iter()
        .copied()
        .filter(|s| s.anchor + tau < cutoff + 1)
        .collect();
    let val: Vec<ForecastSample> = split.train.iter().copied().filter(|s| s.anchor >= cutoff).collect();
    if train.is_empty() || val.is_empty() || split.test.is_empty() {
        return Err(Error::Empty("training, validation or test samples"));
    }
    Ok(SampleSplit {
        train,
        val,
        test: split.test,
    })
}

fn thin<T: Copy>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|i| items[i * items.len() / max]).collect()
}

fn encode_all(panel: &Panel, samples: &[ForecastSample], k: usize, tau: usize) -> Result<Vec<EncodedSample>> {
    samples.iter().map(|&s| panel.encode(s, k, tau)).collect()
}

/// Mean pinball loss of the model over encoded samples.
pub fn pinball_over(model: &Tft, params: &ParamStore, samples: &[EncodedSample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        let mut g = Graph::new();
        let l = model.loss(&mut g, params, &batch)?;
        total += g.data(l)[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Forecasts of `samples` in target units with labels and the persistence
/// baseline.
pub fn forecast_samples(
    model: &Tft,
    params: &ParamStore,
    stats: &NormStats,
    raw: &Panel,
    samples: &[ForecastSample],
    batch_size: usize,
) -> Result<Forecasts> {
    forecast_with_sets(model, params, stats, raw, samples, batch_size).map(|(f, _)| f)
}

/// [`forecast_samples`] that also returns each sample's forecast set, with
/// predictions in target units.
pub fn forecast_with_sets(
    model: &Tft,
    params: &ParamStore,
    stats: &NormStats,
    raw: &Panel,
    samples: &[ForecastSample],
    batch_size: usize,
) -> Result<(Forecasts, Vec<ForecastSet>)> {
    let cfg = model.config();
    let norm = stats.apply(raw)?;
    let encoded = encode_all(&norm, samples, cfg.k, cfg.tau)?;
    let refs: Vec<&EncodedSample> = encoded.iter().collect();
    let mut sets = model.forecast(params, &refs, batch_size)?;
    let off = cfg.schema.target_offset();
    let nt = cfg.n_targets();
    let mut f = Forecasts {
        quantiles: cfg.quantiles.clone(),
        tau: cfg.tau,
        n_targets: nt,
        entities: Vec::with_capacity(samples.len()),
        pred: Vec::new(),
        labels: Vec::new(),
        baseline: baseline_persistence(raw, samples, cfg.tau)?,
    };
    for (s, set) in samples.iter().zip(sets.iter_mut()) {
        denormalize(set, cfg, stats, &raw.entities[s.entity].name)?;
        f.entities.push(s.entity);
        f.pred.extend_from_slice(&set.pred);
        for t in s.future_times(cfg.tau) {
            f.labels.extend((0..nt).map(|j| raw.value(s.entity, t, off + j)));
        }
    }
    Ok((f, sets))
}

/// Fits a forecaster on `raw` with a temporal split at `t_split` and scores
/// it on the test windows.
pub fn train_tft(raw: &Panel, t_split: usize, cfg: TftConfig, train: &TrainConfig) -> Result<TftRun> {
    train.validate()?;
    cfg.validate()?;
    if raw.schema != cfg.schema {
        return Err(Error::SchemaMismatch(
            "panel schema differs from the model config".into(),
        ));
    }
    let (k, tau) = (cfg.k, cfg.tau);
    let stats = NormStats::fit(raw, t_split)?;
    let norm = stats.apply(raw)?;
    let split = split_samples(&norm, k, tau, t_split, train.val_fraction)?;
    let train_set = encode_all(&norm, &split.train, k, tau)?;
    let val_set = encode_all(&norm, &thin(&split.val, MAX_VAL_SAMPLES), k, tau)?;
    let mut params = ParamStore::new();
    let model = Tft::new(&mut params, cfg, train.seed)?;
    seed_head_bias(&model, &mut params, &train_set)?;
    let history = fit(
        &mut params,
        train,
        train_set.len(),
        |g, p, idx| {
            let refs: Vec<&EncodedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            model.loss(g, p, &Batch::from_samples(&refs)?)
        },
        |p| pinball_over(&model, p, &val_set, 256),
    )?;
    let test = forecast_samples(&model, &params, &stats, raw, &split.test, 256)?;
    let names: Vec<String> = raw.entities.iter().map(|e| e.name.clone()).collect();
    let report = evaluate(&test, &names, &model.config().schema.targets)?;
    Ok(TftRun {
        model,
        params,
        stats,
        history,
        report,
        test,
        test_samples: split.test,
    })
}

/// Starts each quantile head at the matching quantile of the normalized
/// training labels, so the heads begin ordered and spread out.
fn seed_head_bias(model: &Tft, params: &mut ParamStore, train_set: &[EncodedSample]) -> Result<()> {
    let cfg = model.config();
    let n_targets = cfg.schema.targets.len();
    for (j, target) in cfg.schema.targets.iter().enumerate() {
        let mut labels: Vec<f64> = train_set
            .iter()
            .flat_map(|s| s.labels.iter().skip(j).step_by(n_targets).copied())
            .collect();
        if labels.is_empty() {
            return Err(Error::Empty("training labels"));
        }
        labels.sort_by(f64::total_cmp);
        let bias: Vec<f64> = cfg
            .quantiles
            .iter()
            .map(|&q| labels[((q * labels.len() as f64).ceil() as usize).clamp(1, labels.len()) - 1])
            .collect();
        let name = format!("head.{target}.b");
        let (_, b) = params
            .iter_mut()
            .find(|(n, _)| n.ends_with(&name))
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))?;
        b.data_mut().copy_from_slice(&bias);
    }
    Ok(())
}

/// Outcome of the look-back search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearch {
    pub candidates: Vec<usize>,
    /// Best validation pinball loss per candidate.
    pub val_loss: Vec<f64>,
    pub best_k: usize,
}

/// Picks the look-back with the lowest validation loss. Every candidate is
/// trained with the same seed and scored on the same validation anchors
/// (those valid for the largest candidate).
pub fn select_k(
    raw: &Panel,
    t_split: usize,
    candidates: &[usize],
    cfg: &TftConfig,
    train: &TrainConfig,
) -> Result<KSearch> {
    let k_max = *candidates.iter().max().ok_or(Error::Empty("k candidates"))?;
    if candidates.contains(&0) {
        return Err(Error::InvalidConfig("k candidates must be positive".into()));
    }
    let stats = NormStats::fit(raw, t_split)?;
    let norm = stats.apply(raw)?;
    let shared_val = split_samples(&norm, k_max, cfg.tau, t_split, train.val_fraction)?.val;
    let first_val = shared_val.iter().map(|s| s.anchor).min().unwrap_or(0);
    let mut val_loss = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let c = TftConfig { k, ..cfg.clone() };
        let train_samples: Vec<ForecastSample> = norm
            .windows(k, c.tau)?
            .into_iter()
            .filter(|s| s.anchor + c.tau < first_val + 1)
            .collect();
        if train_samples.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        let train_set = encode_all(&norm, &train_samples, k, c.tau)?;
        let val_set = encode_all(&norm, &thin(&shared_val, MAX_VAL_SAMPLES), k, c.tau)?;
        let mut params = ParamStore::new();
        let model = Tft::new(&mut params, c, train.seed)?;
        seed_head_bias(&model, &mut params, &train_set)?;
        let h = fit(
            &mut params,
            train,
            train_set.len(),
            |g, p, idx| {
                let refs: Vec<&EncodedSample> = idx.iter().map(|&i| &train_set[i]).collect();
                model.loss(g, p, &Batch::from_samples(&refs)?)
            },
            |p| pinball_over(&model, p, &val_set, 256),
        )?;
        val_loss.push(h.val_loss.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let best = (0..candidates.len())
        .min_by(|&a, &b| val_loss[a].total_cmp(&val_loss[b]))
        .expect("non-empty");
    Ok(KSearch {
        candidates: candidates.to_vec(),
        val_loss,
        best_k: candidates[best],
    })
}
