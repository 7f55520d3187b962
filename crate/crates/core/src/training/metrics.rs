use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{ForecastSample, Panel};

/// Quantile loss of one prediction.
pub fn pinball_loss(y: f64, y_hat: f64, q: f64) -> f64 {
    if y >= y_hat {
        q * (y - y_hat)
    } else {
        (1.0 - q) * (y_hat - y)
    }
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::Empty("metric inputs"));
    }
    Ok(())
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Hold-last forecast: the target value at each anchor repeated over all
/// `tau` horizons. Returns `[S, τ, n_targets]` in panel units.
pub fn baseline_persistence(panel: &Panel, samples: &[ForecastSample], tau: usize) -> Result<Vec<f64>> {
    let nt = panel.schema.n_targets();
    let off = panel.schema.target_offset();
    let mut out = Vec::with_capacity(samples.len() * tau * nt);
    for s in samples {
        panel.check_window(*s, 1, tau)?;
        let last: Vec<f64> = (0..nt).map(|j| panel.value(s.entity, s.anchor, off + j)).collect();
        for _ in 0..tau {
            out.extend_from_slice(&last);
        }
    }
    Ok(out)
}

/// Quantile forecasts of a set of samples, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecasts {
    pub quantiles: Vec<f64>,
    pub tau: usize,
    pub n_targets: usize,
    /// Entity index of each sample.
    pub entities: Vec<usize>,
    /// `[S, τ, n_targets, Q]`
    pub pred: Vec<f64>,
    /// `[S, τ, n_targets]`
    pub labels: Vec<f64>,
    /// `[S, τ, n_targets]`
    pub baseline: Vec<f64>,
}

impl Forecasts {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Index of the quantile closest to the median.
    pub fn median_index(&self) -> usize {
        let mut best = 0;
        for (i, q) in self.quantiles.iter().enumerate() {
            if (q - 0.5).abs() < (self.quantiles[best] - 0.5).abs() {
                best = i;
            }
        }
        best
    }

    fn validate(&self) -> Result<()> {
        let cells = self.len() * self.tau * self.n_targets;
        if self.quantiles.is_empty() {
            return Err(Error::Empty("quantiles"));
        }
        if self.labels.len() != cells || self.baseline.len() != cells {
            return Err(Error::LengthMismatch(self.labels.len(), cells));
        }
        if self.pred.len() != cells * self.quantiles.len() {
            return Err(Error::LengthMismatch(self.pred.len(), cells * self.quantiles.len()));
        }
        Ok(())
    }
}

/// Scores of one airport and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub entity: String,
    pub target: String,
    pub count: usize,
    /// Of the median forecast, in squared target units.
    pub mse: f64,
    pub mae: f64,
    pub pinball: Vec<f64>,
    pub baseline_mse: f64,
    pub baseline_mae: f64,
    /// Share of forecasts whose quantiles are not in ascending order.
    pub crossing_rate: f64,
    /// Share of labels between the lowest and highest quantile.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub quantiles: Vec<f64>,
    pub cells: Vec<CellMetrics>,
    /// Per target: mean over entities of the median mse.
    pub mse_by_target: Vec<f64>,
    pub baseline_mse_by_target: Vec<f64>,
    /// Per target: `1 - mse / baseline_mse`, using the entity means.
    pub skill_by_target: Vec<f64>,
    pub crossing_rate: f64,
    pub coverage: f64,
}

/// Scores forecasts per entity and target.
pub fn evaluate(f: &Forecasts, entities: &[String], targets: &[String]) -> Result<MetricsReport> {
    f.validate()?;
    if targets.len() != f.n_targets {
        return Err(Error::LengthMismatch(targets.len(), f.n_targets));
    }
    let nq = f.quantiles.len();
    let med = f.median_index();
    let mut cells = Vec::new();
    let (mut cross_all, mut cover_all, mut n_all) = (0usize, 0usize, 0usize);
    for (ei, name) in entities.iter().enumerate() {
        for (ti, target) in targets.iter().enumerate() {
            let (mut y, mut yh, mut yb) = (Vec::new(), Vec::new(), Vec::new());
            let mut pin = alloc::vec![0.0; nq];
            let (mut cross, mut cover) = (0usize, 0usize);
            for s in (0..f.len()).filter(|&s| f.entities[s] == ei) {
                for h in 0..f.tau {
                    let cell = (s * f.tau + h) * f.n_targets + ti;
                    let qs = &f.pred[cell * nq..][..nq];
                    let label = f.labels[cell];
                    y.push(label);
                    yh.push(qs[med]);
                    yb.push(f.baseline[cell]);
                    for (p, (&v, &q)) in pin.iter_mut().zip(qs.iter().zip(&f.quantiles)) {
                        *p += pinball_loss(label, v, q);
                    }
                    if qs.windows(2).any(|w| w[1] < w[0]) {
                        cross += 1;
                    }
                    if label >= qs[0] && label <= qs[nq - 1] {
                        cover += 1;
                    }
                }
            }
            if y.is_empty() {
                continue;
            }
            let n = y.len();
            cross_all += cross;
            cover_all += cover;
            n_all += n;
            cells.push(CellMetrics {
                entity: name.clone(),
                target: target.clone(),
                count: n,
                mse: mse(&y, &yh)?,
                mae: mae(&y, &yh)?,
                pinball: pin.into_iter().map(|p| p / n as f64).collect(),
                baseline_mse: mse(&y, &yb)?,
                baseline_mae: mae(&y, &yb)?,
                crossing_rate: cross as f64 / n as f64,
                coverage: cover as f64 / n as f64,
            });
        }
    }
    if n_all == 0 {
        return Err(Error::Empty("forecasts"));
    }
    let mut mse_by_target = Vec::new();
    let mut baseline_mse_by_target = Vec::new();
    let mut skill_by_target = Vec::new();
    for target in targets {
        let sel: Vec<&CellMetrics> = cells.iter().filter(|c| &c.target == target).collect();
        let m = sel.iter().map(|c| c.mse).sum::<f64>() / sel.len() as f64;
        let b = sel.iter().map(|c| c.baseline_mse).sum::<f64>() / sel.len() as f64;
        mse_by_target.push(m);
        baseline_mse_by_target.push(b);
        skill_by_target.push(if b > 0.0 { 1.0 - m / b } else { 0.0 });
    }
    Ok(MetricsReport {
        quantiles: f.quantiles.clone(),
        cells,
        mse_by_target,
        baseline_mse_by_target,
        skill_by_target,
        crossing_rate: cross_all as f64 / n_all as f64,
        coverage: cover_all as f64 / n_all as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(10.0, 8.0, 0.5), 1.0);
        assert_eq!(pinball_loss(2.0, 0.0, 0.25), 0.5);
        assert_eq!(pinball_loss(0.0, 2.0, 0.25), 1.5);
    }

    #[test]
    fn mse_mae_examples() {
        assert_eq!(mse(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), 9.0);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), 3.0);
        assert_eq!(mse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2)));
        assert_eq!(mae(&[], &[]), Err(Error::Empty("metric inputs")));
    }
}
