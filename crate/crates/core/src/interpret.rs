//! Variable importance and attention-by-lag summaries of forecast sets.
//!
//! Importance is the mean variable-selection weight over samples and time
//! steps. Attention mass at a lag is averaged over heads and over the future
//! query positions allowed to see that position.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tft::{ForecastSet, TftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub encoder_vars: Vec<(String, f64)>,
    pub decoder_vars: Vec<(String, f64)>,
    pub static_vars: Vec<(String, f64)>,
    /// `(lag, weight)`: lags `-k..=-1` for the past window, `1..=τ` for the
    /// future window.
    pub attention_by_lag: Vec<(i64, f64)>,
}

impl ImportanceSummary {
    /// Encoder variables sorted by decreasing weight, ties by name.
    pub fn encoder_ranking(&self) -> Vec<(String, f64)> {
        rank(&self.encoder_vars)
    }

    pub fn decoder_ranking(&self) -> Vec<(String, f64)> {
        rank(&self.decoder_vars)
    }

    pub fn attention_at(&self, lag: i64) -> Option<f64> {
        self.attention_by_lag.iter().find(|(l, _)| *l == lag).map(|(_, w)| *w)
    }
}

fn rank(vars: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut v = vars.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Lag label of sequence position `p` with look-back `k`.
pub fn lag_of(p: usize, k: usize) -> i64 {
    if p < k {
        p as i64 - k as i64
    } else {
        (p - k + 1) as i64
    }
}

fn mean_rows(rows: &[&[f64]], width: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; width];
    let mut n = 0usize;
    for r in rows {
        if r.len() % width != 0 {
            return Err(Error::SchemaMismatch("weight block width".into()));
        }
        for row in r.chunks(width) {
            acc.iter_mut().zip(row).for_each(|(a, w)| *a += w);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("weight rows"));
    }
    Ok(acc.into_iter().map(|a| a / n as f64).collect())
}

/// Averages interpretability tensors of forecasts made with `cfg`.
pub fn aggregate(sets: &[ForecastSet], cfg: &TftConfig) -> Result<ImportanceSummary> {
    if sets.is_empty() {
        return Err(Error::Empty("forecast sets"));
    }
    let s = &cfg.schema;
    let (k, tau) = (cfg.k, cfg.tau);
    let len = k + tau;
    let (np, nf, ns) = (s.n_past(), s.n_future(), s.static_vars.len());
    for set in sets {
        if set.past_weights.len() != k * np
            || set.future_weights.len() != tau * nf
            || set.static_weights.len() != ns
            || set.attention.len() != tau * len
        {
            return Err(Error::SchemaMismatch("forecast set does not match the config".into()));
        }
    }
    let past: Vec<&[f64]> = sets.iter().map(|x| x.past_weights.as_slice()).collect();
    let fut: Vec<&[f64]> = sets.iter().map(|x| x.future_weights.as_slice()).collect();
    let stat: Vec<&[f64]> = sets.iter().map(|x| x.static_weights.as_slice()).collect();
    let enc = mean_rows(&past, np)?;
    let dec = mean_rows(&fut, nf)?;
    let st = mean_rows(&stat, ns)?;

    let mut lag_sum = vec![0.0; len];
    for set in sets {
        for (p, acc) in lag_sum.iter_mut().enumerate() {
            let first_q = p.saturating_sub(k);
            let seen: f64 = (first_q..tau).map(|qi| set.attention[qi * len + p]).sum();
            *acc += seen / (tau - first_q) as f64;
        }
    }
    let attention_by_lag = lag_sum
        .into_iter()
        .enumerate()
        .map(|(p, a)| (lag_of(p, k), a / sets.len() as f64))
        .collect();
    let named = |names: Vec<String>, w: Vec<f64>| names.into_iter().zip(w).collect::<Vec<_>>();
    Ok(ImportanceSummary {
        encoder_vars: named(s.past_vars().into_iter().map(|v| v.name).collect(), enc),
        decoder_vars: named(s.known.iter().map(|v| v.name.clone()).collect(), dec),
        static_vars: named(s.static_vars.iter().map(|v| v.name.clone()).collect(), st),
        attention_by_lag,
    })
}

/// Mean attention at lag −1 minus mean attention at lag −k.
pub fn attention_recency_score(summary: &ImportanceSummary) -> Result<f64> {
    let k = summary.attention_by_lag.iter().filter(|(l, _)| *l < 0).count();
    if k < 2 {
        return Err(Error::InvalidConfig("recency needs at least two past lags".into()));
    }
    let near = summary.attention_at(-1).ok_or(Error::Empty("lag -1"))?;
    let far = summary.attention_at(-(k as i64)).ok_or(Error::Empty("lag -k"))?;
    Ok(near - far)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{VarKind, VarSpec, VariableSchema};

    fn cfg(k: usize, tau: usize) -> TftConfig {
        TftConfig {
            d: 4,
            heads: 1,
            dropout: 0.0,
            k,
            tau,
            quantiles: vec![0.25, 0.5, 0.75],
            schema: VariableSchema {
                static_vars: vec![VarSpec::new("s", VarKind::Categorical { cardinality: 2 })],
                observed: vec![],
                known: vec![VarSpec::new("f", VarKind::Real)],
                targets: vec!["y".into()],
            },
        }
    }

    fn uniform_causal(k: usize, tau: usize) -> Vec<f64> {
        let len = k + tau;
        let mut a = vec![0.0; tau * len];
        for qi in 0..tau {
            let visible = k + qi + 1;
            for p in 0..visible {
                a[qi * len + p] = 1.0 / visible as f64;
            }
        }
        a
    }

    fn set(tau: usize, past: Vec<f64>, attention: Vec<f64>) -> ForecastSet {
        ForecastSet {
            pred: vec![0.0; tau * 3],
            attention,
            past_weights: past,
            future_weights: vec![1.0; tau],
            static_weights: vec![1.0],
        }
    }

    #[test]
    fn lags() {
        assert_eq!(
            (0..6).map(|p| lag_of(p, 4)).collect::<Vec<_>>(),
            vec![-4, -3, -2, -1, 1, 2]
        );
    }

    #[test]
    fn single_variable_groups_get_full_weight() {
        let c = cfg(2, 2);
        let s = set(2, vec![0.3, 0.7, 0.6, 0.4], uniform_causal(2, 2));
        let sum = aggregate(&[s], &c).unwrap();
        assert_eq!(sum.decoder_vars, vec![("f".into(), 1.0)]);
        assert_eq!(sum.static_vars, vec![("s".into(), 1.0)]);
        assert!((sum.encoder_vars[0].1 - 0.45).abs() < 1e-12);
        let total: f64 = sum.encoder_vars.iter().map(|v| v.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_attention_has_zero_recency() {
        let c = cfg(3, 2);
        let s = set(2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5], uniform_causal(3, 2));
        let sum = aggregate(&[s], &c).unwrap();
        assert!(attention_recency_score(&sum).unwrap().abs() < 1e-15);
        assert!(sum.attention_by_lag.iter().all(|(_, w)| *w >= 0.0));
    }

    #[test]
    fn copies_do_not_change_summary() {
        let c = cfg(2, 2);
        let s = set(2, vec![0.1, 0.9, 0.8, 0.2], uniform_causal(2, 2));
        let one = aggregate(core::slice::from_ref(&s), &c).unwrap();
        let many = aggregate(&[s.clone(), s.clone(), s], &c).unwrap();
        for (a, b) in one.encoder_vars.iter().zip(&many.encoder_vars) {
            assert!((a.1 - b.1).abs() < 1e-15);
        }
    }

    #[test]
    fn recency_needs_two_lags() {
        let c = cfg(1, 2);
        let s = set(2, vec![0.5, 0.5], uniform_causal(1, 2));
        let sum = aggregate(&[s], &c).unwrap();
        assert!(attention_recency_score(&sum).is_err());
    }
}
