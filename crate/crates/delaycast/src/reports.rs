//! Tabular outputs: training history, forecasts, importance and attention.

use std::path::Path;

use delaycast_core::formulation::ForecastSample;
use delaycast_core::interpret::ImportanceSummary;
use delaycast_core::training::{Forecasts, History};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))?;
    fsutil::write(path, &bytes)
}

fn reader(path: &Path) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>> {
    Ok(csv::Reader::from_reader(std::io::Cursor::new(fsutil::read(path)?)))
}

/// `history.csv`: `epoch,train_loss,val_loss`, epochs counted from 1.
pub fn write_history(path: &Path, h: &History) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for (i, (t, v)) in h.train_loss.iter().zip(&h.val_loss).enumerate() {
        w.write_record([(i + 1).to_string(), t.to_string(), v.to_string()])?;
    }
    finish(w, path)
}

/// Column name of quantile `q`, e.g. `q25` for 0.25.
pub fn quantile_column(q: f64) -> String {
    let pct = (q * 100.0).round();
    if (q * 100.0 - pct).abs() < 1e-9 {
        format!("q{pct}")
    } else {
        format!("q{}", q * 100.0)
    }
}

/// One line of `forecast.csv`. `t` is the anchor, the forecast time is
/// `t + tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub airport: String,
    pub t: usize,
    pub target: String,
    pub tau: usize,
    pub quantiles: Vec<f64>,
}

/// Flattens forecasts into rows ordered by sample, target and horizon.
pub fn forecast_rows(
    f: &Forecasts,
    samples: &[ForecastSample],
    entity_names: &[String],
    targets: &[String],
) -> Result<Vec<ForecastRow>> {
    if samples.len() != f.len() || targets.len() != f.n_targets {
        return Err(CliError::Data("forecasts do not match the samples or targets".into()));
    }
    let nq = f.quantiles.len();
    let mut rows = Vec::with_capacity(samples.len() * f.tau * f.n_targets);
    for (si, s) in samples.iter().enumerate() {
        for (j, target) in targets.iter().enumerate() {
            for h in 0..f.tau {
                let at = ((si * f.tau + h) * f.n_targets + j) * nq;
                rows.push(ForecastRow {
                    airport: entity_names[s.entity].clone(),
                    t: s.anchor,
                    target: target.clone(),
                    tau: h + 1,
                    quantiles: f.pred[at..at + nq].to_vec(),
                });
            }
        }
    }
    Ok(rows)
}

/// `forecast.csv`: `airport,t,target,tau` then one column per quantile.
pub fn write_forecasts(path: &Path, quantiles: &[f64], rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut h: Vec<String> = ["airport", "t", "target", "tau"].map(String::from).to_vec();
    h.extend(quantiles.iter().map(|&q| quantile_column(q)));
    w.write_record(&h)?;
    for r in rows {
        if r.quantiles.len() != quantiles.len() {
            return Err(CliError::Data("forecast row has the wrong number of quantiles".into()));
        }
        let mut rec = vec![r.airport.clone(), r.t.to_string(), r.target.clone(), r.tau.to_string()];
        rec.extend(r.quantiles.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn read_forecasts(path: &Path) -> Result<(Vec<String>, Vec<ForecastRow>)> {
    let mut rd = reader(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header.len() < 5 || header[..4] != ["airport", "t", "target", "tau"] {
        return Err(CliError::Data(format!(
            "{}: unexpected forecast header",
            path.display()
        )));
    }
    let bad = |s: &str| CliError::Data(format!("{}: bad value {s:?}", path.display()));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(ForecastRow {
            airport: rec[0].to_string(),
            t: rec[1].parse().map_err(|_| bad(&rec[1]))?,
            target: rec[2].to_string(),
            tau: rec[3].parse().map_err(|_| bad(&rec[3]))?,
            quantiles: rec
                .iter()
                .skip(4)
                .map(|s| s.parse().map_err(|_| bad(s)))
                .collect::<Result<_>>()?,
        });
    }
    Ok((header[4..].to_vec(), rows))
}

/// `importance.csv`: `group,variable,weight` for the encoder, decoder and
/// static groups, each sorted by decreasing weight.
pub fn write_importance(path: &Path, s: &ImportanceSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "variable", "weight"])?;
    let mut stat = s.static_vars.clone();
    stat.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (group, vars) in [
        ("encoder", s.encoder_ranking()),
        ("decoder", s.decoder_ranking()),
        ("static", stat),
    ] {
        for (name, v) in vars {
            w.write_record([group.to_string(), name, v.to_string()])?;
        }
    }
    finish(w, path)
}

pub fn read_importance(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let mut rd = reader(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v = rec[2]
            .parse()
            .map_err(|_| CliError::Data(format!("bad weight {:?}", &rec[2])))?;
        out.push((rec[0].to_string(), rec[1].to_string(), v));
    }
    Ok(out)
}

/// `attention.csv`: `lag,weight`; negative lags are past steps, positive
/// lags future steps.
pub fn write_attention(path: &Path, s: &ImportanceSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lag", "weight"])?;
    for (lag, v) in &s.attention_by_lag {
        w.write_record([lag.to_string(), v.to_string()])?;
    }
    finish(w, path)
}

pub fn read_attention(path: &Path) -> Result<Vec<(i64, f64)>> {
    let mut rd = reader(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = || CliError::Data(format!("bad attention row {rec:?}"));
        out.push((rec[0].parse().map_err(|_| bad())?, rec[1].parse().map_err(|_| bad())?));
    }
    Ok(out)
}
