use std::path::Path;

use delaycast_core::formulation::{ForecastSample, Panel};
use delaycast_core::interpret::{aggregate, attention_recency_score, ImportanceSummary};
use delaycast_core::nn::ParamStore;
use delaycast_core::tft::Tft;
use delaycast_core::training::{
    evaluate, forecast_with_sets, select_k, train_tft as fit_tft, Forecasts, KSearch, TftRun,
};
use serde::{Deserialize, Serialize};

use super::{load_dataset, steps, Context, Run};
use crate::bundle::{self, TftBundleConfig};
use crate::config::{self, TftTrainConfig};
use crate::error::{CliError, Result};
use crate::plots::{self, SeriesPlot};
use crate::{fsutil, reports};

const BATCH: usize = 256;

pub struct ForecasterRun {
    pub run: TftRun,
    pub k_search: Option<KSearch>,
    pub t_split: usize,
}

/// Trains a forecaster on a panel, first choosing `k` when a grid is given.
pub fn fit_forecaster(panel: &Panel, cfg: &TftTrainConfig) -> Result<ForecasterRun> {
    let t_split = cfg.t_split(steps(panel)?)?;
    let mut model = cfg.model(panel.schema.clone());
    let k_search = if cfg.k_grid.is_empty() {
        None
    } else {
        let s = select_k(panel, t_split, &cfg.k_grid, &model, &cfg.train)?;
        model.k = s.best_k;
        Some(s)
    };
    let run = fit_tft(panel, t_split, model, &cfg.train)?;
    Ok(ForecasterRun { run, k_search, t_split })
}

/// Windows whose labels all fall in the test period.
pub fn test_samples(panel: &Panel, bcfg: &TftBundleConfig) -> Result<Vec<ForecastSample>> {
    let (k, tau) = (bcfg.model.k, bcfg.model.tau);
    let all = panel.windows(k, tau)?;
    Ok(panel.temporal_split(&all, tau, bcfg.t_split)?.test)
}

fn entity_names(panel: &Panel) -> Vec<String> {
    panel.entities.iter().map(|e| e.name.clone()).collect()
}

/// Loaded bundle with the dataset it is applied to.
struct Applied {
    cfg: TftBundleConfig,
    model: Tft,
    params: ParamStore,
    panel: Panel,
}

fn apply(run: &mut Run, data: &Path, bundle_dir: &Path) -> Result<Applied> {
    run.input(bundle_dir);
    let (cfg, model, params) = bundle::load_tft(bundle_dir)?;
    run.input(&super::dataset_path(data));
    let (_, panel) = load_dataset(data)?;
    bundle::check_schema(&cfg, &panel.schema)?;
    Ok(Applied {
        cfg,
        model,
        params,
        panel,
    })
}

/// Trains the forecaster and writes the bundle, `report.json` and
/// `history.csv` (plus `k_search.json` when `k` was searched).
pub fn train_tft(ctx: &Context, data: &Path) -> Result<()> {
    let mut run = Run::start("train-tft");
    let mut cfg: TftTrainConfig = config::load(ctx.config.as_deref())?;
    if let Some(s) = ctx.seed {
        cfg.train.seed = s;
    }
    run.input(&super::dataset_path(data));
    let (_, panel) = load_dataset(data)?;
    let fr = fit_forecaster(&panel, &cfg)?;
    let r = &fr.run;
    let bcfg = TftBundleConfig {
        format_version: bundle::FORMAT_VERSION,
        model: r.model.config().clone(),
        stats: r.stats.clone(),
        train: cfg.train.clone(),
        t_split: fr.t_split,
    };
    bundle::save_tft(&ctx.out, &bcfg, &r.params)?;
    run.output(&ctx.out.join("config.json"));
    run.output(&ctx.out.join("weights"));
    let rep = ctx.out.join("report.json");
    fsutil::write_json(&rep, &r.report)?;
    run.output(&rep);
    let hist = ctx.out.join("history.csv");
    reports::write_history(&hist, &r.history)?;
    run.output(&hist);
    if let Some(ks) = &fr.k_search {
        let p = ctx.out.join("k_search.json");
        fsutil::write_json(&p, ks)?;
        run.output(&p);
    }
    run.finish(ctx, &cfg, cfg.train.seed)
}

/// Writes `forecast.csv` for the test windows, optionally narrowed to one
/// airport and/or one anchor.
pub fn predict(
    ctx: &Context,
    data: &Path,
    bundle_dir: &Path,
    airport: Option<&str>,
    anchor: Option<usize>,
) -> Result<()> {
    let mut run = Run::start("predict");
    let a = apply(&mut run, data, bundle_dir)?;
    let mut samples = test_samples(&a.panel, &a.cfg)?;
    if let Some(code) = airport {
        let e = a
            .panel
            .entity_index(code)
            .ok_or_else(|| CliError::Usage(format!("unknown airport {code}")))?;
        samples.retain(|s| s.entity == e);
    }
    if let Some(t) = anchor {
        samples.retain(|s| s.anchor == t);
    }
    if samples.is_empty() {
        return Err(CliError::Usage("no test window matches the selection".into()));
    }
    let (f, _) = forecast_with_sets(&a.model, &a.params, &a.cfg.stats, &a.panel, &samples, BATCH)?;
    let rows = reports::forecast_rows(&f, &samples, &entity_names(&a.panel), &a.cfg.model.schema.targets)?;
    let path = ctx.out.join("forecast.csv");
    reports::write_forecasts(&path, &f.quantiles, &rows)?;
    run.output(&path);
    let seed = a.cfg.train.seed;
    run.finish(ctx, &(&a.cfg.model, airport, anchor), seed)
}

/// Scores the bundle on the test windows and writes `report.json`.
pub fn eval(ctx: &Context, data: &Path, bundle_dir: &Path) -> Result<()> {
    let mut run = Run::start("eval");
    let a = apply(&mut run, data, bundle_dir)?;
    let samples = test_samples(&a.panel, &a.cfg)?;
    let (f, _) = forecast_with_sets(&a.model, &a.params, &a.cfg.stats, &a.panel, &samples, BATCH)?;
    let report = evaluate(&f, &entity_names(&a.panel), &a.cfg.model.schema.targets)?;
    let path = ctx.out.join("report.json");
    fsutil::write_json(&path, &report)?;
    run.output(&path);
    run.finish(ctx, &a.cfg.model, a.cfg.train.seed)
}

/// Interpretation summary written by `interpret`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretSummary {
    pub samples: usize,
    pub attention_recency_score: Option<f64>,
    pub encoder_top: Vec<(String, f64)>,
}

/// Aggregated importance and attention of a bundle over test windows.
pub fn interpret_samples(
    model: &Tft,
    params: &ParamStore,
    cfg: &TftBundleConfig,
    panel: &Panel,
    samples: &[ForecastSample],
) -> Result<(ImportanceSummary, Forecasts)> {
    let (f, sets) = forecast_with_sets(model, params, &cfg.stats, panel, samples, BATCH)?;
    let summary = aggregate(&sets, model.config())?;
    Ok((summary, f))
}

/// Writes `importance.csv`, `attention.csv`, `interpret.json` and SVG
/// charts: actual against predicted per airport and target at `horizon`,
/// importance bars per variable group and attention by lag.
pub fn interpret(ctx: &Context, data: &Path, bundle_dir: &Path, horizon: usize, window: usize) -> Result<()> {
    let mut run = Run::start("interpret");
    let a = apply(&mut run, data, bundle_dir)?;
    let tau = a.cfg.model.tau;
    if horizon == 0 || horizon > tau {
        return Err(CliError::Usage(format!("horizon must lie in 1..={tau}")));
    }
    let samples = test_samples(&a.panel, &a.cfg)?;
    let (summary, f) = interpret_samples(&a.model, &a.params, &a.cfg, &a.panel, &samples)?;
    let out = &ctx.out;
    let emit = |name: &str| out.join(name);

    let p = emit("importance.csv");
    reports::write_importance(&p, &summary)?;
    run.output(&p);
    let p = emit("attention.csv");
    reports::write_attention(&p, &summary)?;
    run.output(&p);
    let p = emit("interpret.json");
    fsutil::write_json(
        &p,
        &InterpretSummary {
            samples: samples.len(),
            attention_recency_score: attention_recency_score(&summary).ok(),
            encoder_top: summary.encoder_ranking().into_iter().take(5).collect(),
        },
    )?;
    run.output(&p);

    for (group, vars) in [
        ("encoder", summary.encoder_ranking()),
        ("decoder", summary.decoder_ranking()),
        ("static", summary.static_vars.clone()),
    ] {
        let p = emit(&format!("importance_{group}.svg"));
        plots::importance_bars(&p, &format!("{group} variable importance"), &vars)?;
        run.output(&p);
    }
    let p = emit("attention_by_lag.svg");
    plots::attention_by_lag(&p, &summary.attention_by_lag)?;
    run.output(&p);

    let nq = f.quantiles.len();
    let med = f.median_index();
    let (lo, hi) = (0, nq - 1);
    let nt = f.n_targets;
    for (e, ent) in a.panel.entities.iter().enumerate() {
        for (j, target) in a.cfg.model.schema.targets.iter().enumerate() {
            let idx: Vec<usize> = (0..f.len()).filter(|&i| f.entities[i] == e).take(window).collect();
            if idx.is_empty() {
                continue;
            }
            let cell = |i: usize| (i * tau + horizon - 1) * nt + j;
            let q = |i: usize, qi: usize| f.pred[cell(i) * nq + qi];
            let t: Vec<f64> = idx.iter().map(|&i| (samples[i].anchor + horizon) as f64).collect();
            let actual: Vec<f64> = idx.iter().map(|&i| f.labels[cell(i)]).collect();
            let lower: Vec<f64> = idx.iter().map(|&i| q(i, lo)).collect();
            let median: Vec<f64> = idx.iter().map(|&i| q(i, med)).collect();
            let upper: Vec<f64> = idx.iter().map(|&i| q(i, hi)).collect();
            let title = format!("{} {target}, {horizon} step(s) ahead", ent.name);
            let p = emit(&format!("forecast_{}_{target}.svg", ent.name));
            plots::actual_vs_predicted(
                &p,
                &SeriesPlot {
                    title: &title,
                    t: &t,
                    actual: &actual,
                    lower: &lower,
                    median: &median,
                    upper: &upper,
                },
            )?;
            run.output(&p);
        }
    }
    run.finish(ctx, &(&a.cfg.model, horizon, window), a.cfg.train.seed)
}
