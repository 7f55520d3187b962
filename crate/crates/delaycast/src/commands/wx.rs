use std::path::{Path, PathBuf};

use delaycast_core::nn::ParamStore;
use delaycast_core::scenario::fill_weather_features;
use delaycast_core::seed;
use delaycast_core::training::{train_autoencoder, History};
use delaycast_core::wx::{reconstruction_error, solve_geometry, CodecConfig, ReconError, WeatherGrid, WxCodec};
use serde::{Deserialize, Serialize};

use super::{dataset_path, Context, Run};
use crate::bundle::{self, CodecBundleConfig};
use crate::config::{self, WxTrainConfig};
use crate::error::{CliError, Result};
use crate::{dataset, fsutil, grids, reports};

/// Shape arithmetic of the codec at 960×1072.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullScaleCheck {
    pub input: (usize, usize),
    pub encoder_heights: Vec<usize>,
    pub encoder_widths: Vec<usize>,
    pub decoder_paddings: Vec<(usize, usize)>,
    pub latent: (usize, usize, usize),
    pub compression_ratio: f64,
    /// Pooled feature of an all-zero grid, when a codec was supplied.
    pub zero_grid_feature: Option<Vec<f64>>,
}

pub fn full_scale_check(codec: Option<(&WxCodec, &ParamStore)>) -> Result<FullScaleCheck> {
    let (h, w) = (960, 1072);
    let geom = solve_geometry(h, w)?;
    let channels = CodecConfig::default().channels;
    let c = *channels.last().expect("default channels");
    let (lh, lw) = geom.latent();
    let zero_grid_feature = match codec {
        Some((codec, p)) => Some(codec.encode_grid(p, &WeatherGrid::zeros(0, h, w))?.feature),
        None => None,
    };
    Ok(FullScaleCheck {
        input: (h, w),
        encoder_heights: geom.encoder_heights(),
        encoder_widths: geom.encoder_widths(),
        decoder_paddings: geom.decoder_paddings().to_vec(),
        latent: (lh, lw, c),
        compression_ratio: geom.compression_ratio(c),
        zero_grid_feature,
    })
}

/// Grid directory of a run: `data/wx` when present, else `data`.
pub fn grid_dir(data: &Path) -> PathBuf {
    let wx = data.join("wx");
    if wx.is_dir() {
        wx
    } else {
        data.to_path_buf()
    }
}

/// Category-level errors of a codec on held-out grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub train_grids: usize,
    pub holdout_grids: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Largest level error over every held-out cell.
    pub max_abs_levels: u8,
    pub mean_max_abs_levels: f64,
    pub mae_vil: f64,
    pub mae_et: f64,
    /// Held-out grids per largest level error, index = error (last bin
    /// collects the rest).
    pub max_abs_histogram: Vec<usize>,
}

pub struct CodecRun {
    pub codec: WxCodec,
    pub params: ParamStore,
    pub history: History,
    pub report: CodecReport,
}

/// Held-out grids: those halfway between training grids, at most 300.
fn holdout(grids: &[WeatherGrid], stride: usize) -> Vec<&WeatherGrid> {
    let picked: Vec<&WeatherGrid> = grids.iter().skip(stride / 2).step_by(stride).collect();
    let step = picked.len().div_ceil(300).max(1);
    picked.into_iter().step_by(step).collect()
}

pub fn evaluate_codec(codec: &WxCodec, params: &ParamStore, grids: &[&WeatherGrid]) -> Result<Vec<ReconError>> {
    grids
        .iter()
        .map(|g| Ok(reconstruction_error(g, &codec.reconstruct(params, g)?)?))
        .collect()
}

/// Trains a codec on every `stride`-th grid and scores it on grids in
/// between.
pub fn fit_codec(grids: &[WeatherGrid], cfg: &WxTrainConfig) -> Result<CodecRun> {
    if cfg.stride < 2 {
        return Err(CliError::Usage(
            "stride must be at least 2 to leave held-out grids".into(),
        ));
    }
    let train: Vec<WeatherGrid> = grids.iter().step_by(cfg.stride).cloned().collect();
    let test = holdout(grids, cfg.stride);
    if train.len() < 2 || test.is_empty() {
        return Err(CliError::Data("too few grids for training and hold-out".into()));
    }
    let mut params = ParamStore::new();
    let mut rng = seed::rng(cfg.train.seed, "wx-init");
    let codec = WxCodec::new(&mut params, &mut rng, &cfg.codec)?;
    let history = train_autoencoder(&codec, &mut params, &train, &cfg.train)?;
    let errors = evaluate_codec(&codec, &params, &test)?;
    let n = errors.len() as f64;
    let mut hist = vec![0usize; 8];
    for e in &errors {
        hist[usize::from(e.max_abs).min(7)] += 1;
    }
    let report = CodecReport {
        train_grids: train.len(),
        holdout_grids: test.len(),
        best_epoch: history.best_epoch,
        best_val_loss: history.val_loss.get(history.best_epoch).copied().unwrap_or(f64::NAN),
        max_abs_levels: errors.iter().map(|e| e.max_abs).max().unwrap_or(0),
        mean_max_abs_levels: errors.iter().map(|e| f64::from(e.max_abs)).sum::<f64>() / n,
        mae_vil: errors.iter().map(|e| e.mae_vil).sum::<f64>() / n,
        mae_et: errors.iter().map(|e| e.mae_et).sum::<f64>() / n,
        max_abs_histogram: hist,
    };
    Ok(CodecRun {
        codec,
        params,
        history,
        report,
    })
}

/// Trains the weather codec and writes its bundle, `history.csv` and
/// `report.json`. With `--paper-scale` only the 960×1072 shape check runs.
pub fn train_wx(ctx: &Context, data: &Path) -> Result<()> {
    let mut run = Run::start("train-wx");
    let mut cfg: WxTrainConfig = config::load(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.train.seed = s;
    }
    if ctx.paper_scale {
        let path = ctx.out.join("paper_scale.json");
        fsutil::write_json(&path, &full_scale_check(None)?)?;
        run.output(&path);
        return run.finish(ctx, &cfg, cfg.train.seed);
    }
    let dir = grid_dir(data);
    run.input(&dir);
    let all = grids::read_dir(&dir)?;
    let first = &all[0];
    let r = fit_codec(&all, &cfg)?;
    bundle::save_codec(
        &ctx.out,
        &CodecBundleConfig {
            format_version: bundle::FORMAT_VERSION,
            codec: cfg.codec.clone(),
            height: first.height(),
            width: first.width(),
        },
        &r.params,
    )?;
    run.output(&ctx.out.join("config.json"));
    run.output(&ctx.out.join("weights"));
    let hist = ctx.out.join("history.csv");
    reports::write_history(&hist, &r.history)?;
    run.output(&hist);
    let rep = ctx.out.join("report.json");
    fsutil::write_json(&rep, &r.report)?;
    run.output(&rep);
    run.finish(ctx, &cfg, cfg.train.seed)
}

/// Encodes every grid to a pooled feature vector (`features.csv`). When the
/// data directory holds a dataset, a copy with these weather features is
/// written too.
pub fn encode_wx(ctx: &Context, data: &Path, bundle_dir: &Path) -> Result<()> {
    let mut run = Run::start("encode-wx");
    run.input(bundle_dir);
    let (bcfg, codec, params) = bundle::load_codec(bundle_dir)?;
    let seed = ctx.seed.unwrap_or(0);
    if ctx.paper_scale {
        let path = ctx.out.join("paper_scale.json");
        fsutil::write_json(&path, &full_scale_check(Some((&codec, &params)))?)?;
        run.output(&path);
    }
    let dir = grid_dir(data);
    run.input(&dir);
    let all = grids::read_dir(&dir)?;
    let mut rows = Vec::with_capacity(all.len());
    for g in &all {
        rows.push((g.timestamp, codec.encode_grid(&params, g)?.feature));
    }
    let feats = ctx.out.join("features.csv");
    dataset::write_features(&feats, &rows)?;
    run.output(&feats);
    let ds = dataset_path(data);
    if data.is_dir() && ds.is_file() {
        run.input(&ds);
        let mut records = dataset::read(&ds)?;
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(CliError::Data(
                "grid timestamps must run 0, 1, 2, … to fill the dataset".into(),
            ));
        }
        let by_t: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
        fill_weather_features(&mut records, &by_t)?;
        let out = ctx.out.join("dataset.csv");
        dataset::write(&out, &records)?;
        run.output(&out);
    }
    run.finish(ctx, &bcfg, seed)
}
