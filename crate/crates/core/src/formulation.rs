//! Airport records, variable schemas, target smoothing, windowing into
//! forecast samples, temporal splitting and normalization.
//!
//! A [`Panel`] holds one contiguous series per entity (airport). Each row
//! lists the past-input variables in schema order: observed, then known,
//! then targets. The known block doubles as the future input. Samples are
//! index windows into the panel and are materialized on demand by
//! [`Panel::encode`].
//!
//! For anchor `a` the past window is `a-k+1 ..= a` and the future window
//! `a+1 ..= a+τ`, so a series of length `T` yields `T - k - τ + 1` samples.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const N_TMI: usize = 15;
pub const N_WX: usize = 16;
pub const N_OBSERVED: usize = 6 + N_WX;
pub const N_KNOWN: usize = 5 + N_TMI + 3;
pub const N_TARGETS: usize = 2;
pub const QUARTERS_PER_DAY: usize = 96;

/// Airports modeled together, in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Airport {
    #[serde(rename = "LGA")]
    Lga,
    #[serde(rename = "JFK")]
    Jfk,
    #[serde(rename = "EWR")]
    Ewr,
    #[serde(rename = "PHL")]
    Phl,
}

impl Airport {
    pub const ALL: [Airport; 4] = [Airport::Lga, Airport::Jfk, Airport::Ewr, Airport::Phl];

    pub fn code(self) -> &'static str {
        match self {
            Airport::Lga => "LGA",
            Airport::Jfk => "JFK",
            Airport::Ewr => "EWR",
            Airport::Phl => "PHL",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.code() == code)
    }
}

/// Shared enroute flags first (nine FCAs, then ZNY inbound and outbound
/// reroutes), then the four airport flags.
pub const TMI_NAMES: [&str; N_TMI] = [
    "afp_fcaa08",
    "afp_fcabw1",
    "afp_fcadc1",
    "afp_fcadc7",
    "afp_fcaid1",
    "afp_fcan92",
    "afp_fcaob1",
    "afp_fcaob3",
    "afp_fcaob6",
    "zny_inbound_reroute",
    "zny_outbound_reroute",
    "gdp",
    "gs",
    "inbound_reroute",
    "outbound_reroute",
];
pub const N_SHARED_TMI: usize = 11;

/// One airport during one quarter hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirportRecord {
    pub airport: Airport,
    pub t: usize,
    pub arrivals: f64,
    pub departures: f64,
    /// Minutes.
    pub arr_delay: f64,
    pub dep_delay: f64,
    /// Percent, 0..=100.
    pub arr_otp: f64,
    pub dep_otp: f64,
    pub wx: [f64; N_WX],
    pub arr_demand: f64,
    pub dep_demand: f64,
    pub aar: f64,
    pub adr: f64,
    pub aar_eff: f64,
    pub tmi: [u8; N_TMI],
    /// 0..=23
    pub hour: u8,
    /// Quarter of day, 0..=95.
    pub qod: u8,
    /// 1..=12
    pub month: u8,
    pub dep_delay_ma: f64,
    pub arr_delay_ma: f64,
}

impl AirportRecord {
    /// Values in [`VariableSchema::delay`] past-variable order.
    pub fn row(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(N_OBSERVED + N_KNOWN + N_TARGETS);
        r.extend([
            self.arrivals,
            self.departures,
            self.arr_delay,
            self.dep_delay,
            self.arr_otp,
            self.dep_otp,
        ]);
        r.extend_from_slice(&self.wx);
        r.extend([self.arr_demand, self.dep_demand, self.aar, self.adr, self.aar_eff]);
        r.extend(self.tmi.iter().map(|&f| f64::from(f)));
        r.extend([f64::from(self.hour), f64::from(self.qod), f64::from(self.month) - 1.0]);
        r.extend([self.dep_delay_ma, self.arr_delay_ma]);
        r
    }

    /// Checks the documented field ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidConfig(format!(
                "{} t={}: {what}",
                self.airport.code(),
                self.t
            )))
        };
        let nonneg = [
            self.arrivals,
            self.departures,
            self.arr_demand,
            self.dep_demand,
            self.aar,
            self.adr,
            self.aar_eff,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("negative or non-finite count/rate");
        }
        if [self.arr_otp, self.dep_otp].iter().any(|p| !(0.0..=100.0).contains(p)) {
            return bad("on-time percentage outside [0,100]");
        }
        if self.tmi.iter().any(|&f| f > 1) {
            return bad("TMI flag not binary");
        }
        if self.hour > 23 || self.qod > 95 || !(1..=12).contains(&self.month) {
            return bad("calendar field out of range");
        }
        Ok(())
    }
}

/// How a variable is fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarKind {
    /// Continuous; z-scored before use.
    Real,
    /// 0/1 flag; used as is.
    Binary,
    /// Integer id in `0..cardinality`, embedded.
    Categorical { cardinality: usize },
    /// Integer phase in `0..period`, mapped to a sin/cos pair.
    Cyclic { period: usize },
}

impl VarKind {
    pub fn is_normalized(self) -> bool {
        matches!(self, VarKind::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub kind: VarKind,
}

impl VarSpec {
    pub fn new(name: &str, kind: VarKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Input groups of the forecaster. Targets are real-valued and also enter
/// the past window as inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub static_vars: Vec<VarSpec>,
    pub observed: Vec<VarSpec>,
    pub known: Vec<VarSpec>,
    pub targets: Vec<String>,
}

impl VariableSchema {
    /// The multi-airport delay schema: 22 observed, 23 known, 2 targets and
    /// the airport as the only static variable.
    pub fn delay() -> Self {
        let real = |n: &str| VarSpec::new(n, VarKind::Real);
        let mut observed: Vec<VarSpec> = ["arrivals", "departures", "arr_delay", "dep_delay", "arr_otp", "dep_otp"]
            .into_iter()
            .map(real)
            .collect();
        observed.extend((0..N_WX).map(|i| real(&format!("f{i}"))));
        let mut known: Vec<VarSpec> = ["arr_demand", "dep_demand", "aar", "adr", "aar_eff"]
            .into_iter()
            .map(real)
            .collect();
        known.extend(TMI_NAMES.iter().map(|n| VarSpec::new(n, VarKind::Binary)));
        known.push(VarSpec::new("hour", VarKind::Categorical { cardinality: 24 }));
        known.push(VarSpec::new(
            "qod",
            VarKind::Cyclic {
                period: QUARTERS_PER_DAY,
            },
        ));
        known.push(VarSpec::new("month", VarKind::Categorical { cardinality: 12 }));
        Self {
            static_vars: vec![VarSpec::new("airport", VarKind::Categorical { cardinality: 4 })],
            observed,
            known,
            targets: vec!["dep_delay_ma".into(), "arr_delay_ma".into()],
        }
    }

    pub fn n_past(&self) -> usize {
        self.observed.len() + self.known.len() + self.targets.len()
    }

    pub fn n_future(&self) -> usize {
        self.known.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    /// Past-window variables in row order.
    pub fn past_vars(&self) -> Vec<VarSpec> {
        let mut v = self.observed.clone();
        v.extend(self.known.iter().cloned());
        v.extend(self.targets.iter().map(|n| VarSpec::new(n, VarKind::Real)));
        v
    }

    /// Column of the first known variable inside a row.
    pub fn known_offset(&self) -> usize {
        self.observed.len()
    }

    /// Column of the first target inside a row.
    pub fn target_offset(&self) -> usize {
        self.observed.len() + self.known.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.static_vars.is_empty() || self.targets.is_empty() || self.known.is_empty() {
            return Err(Error::SchemaMismatch(
                "schema needs static, known and target variables".into(),
            ));
        }
        if self
            .static_vars
            .iter()
            .any(|v| !matches!(v.kind, VarKind::Categorical { .. }))
        {
            return Err(Error::SchemaMismatch("static variables must be categorical".into()));
        }
        let all = self.past_vars();
        for v in all.iter().chain(&self.static_vars) {
            match v.kind {
                VarKind::Categorical { cardinality: 0 } | VarKind::Cyclic { period: 0 } => {
                    return Err(Error::SchemaMismatch(format!("{} has an empty range", v.name)))
                }
                _ => {}
            }
        }
        let mut names: Vec<&str> = all.iter().chain(&self.static_vars).map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SchemaMismatch("variable names must be unique".into()));
        }
        Ok(())
    }
}

/// Trailing mean over `min(window, i + 1)` values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("moving_average series"));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("moving average window must be at least 1".into()));
    }
    let out = (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect();
    Ok(out)
}

/// One entity's contiguous series.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub name: String,
    pub static_ids: Vec<usize>,
    /// Time index of the first row.
    pub t0: usize,
    /// Row-major `len × n_past`.
    pub rows: Vec<f64>,
}

impl Entity {
    pub fn len(&self, n_cols: usize) -> usize {
        self.rows.len() / n_cols
    }
}

/// Window of one forecast sample: entity index and anchor time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ForecastSample {
    pub entity: usize,
    pub anchor: usize,
}

impl ForecastSample {
    /// Time indices covered by the past window.
    pub fn past_times(&self, k: usize) -> core::ops::RangeInclusive<usize> {
        self.anchor + 1 - k..=self.anchor
    }

    /// Time indices covered by the future window and the labels.
    pub fn future_times(&self, tau: usize) -> core::ops::RangeInclusive<usize> {
        self.anchor + 1..=self.anchor + tau
    }
}

/// Network-ready arrays of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub static_ids: Vec<usize>,
    /// `k × n_past`
    pub past: Vec<f64>,
    /// `τ × n_future`
    pub future: Vec<f64>,
    /// `τ × n_targets`
    pub labels: Vec<f64>,
}

/// Per-entity series over a shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub schema: VariableSchema,
    pub entities: Vec<Entity>,
}

/// Train and test samples of a temporal split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<ForecastSample>,
    pub test: Vec<ForecastSample>,
}

impl Panel {
    pub fn new(schema: VariableSchema, entities: Vec<Entity>) -> Result<Self> {
        schema.validate()?;
        let n = schema.n_past();
        for e in &entities {
            if e.rows.is_empty() || e.rows.len() % n != 0 {
                return Err(Error::SchemaMismatch(format!(
                    "entity {} has {} values, not a multiple of {n}",
                    e.name,
                    e.rows.len()
                )));
            }
            if e.static_ids.len() != schema.static_vars.len() {
                return Err(Error::SchemaMismatch(format!("entity {} static ids", e.name)));
            }
        }
        Ok(Self { schema, entities })
    }

    /// Groups records by airport (canonical order), sorted by time.
    pub fn from_records(records: &[AirportRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("records"));
        }
        let mut entities = Vec::new();
        for airport in Airport::ALL {
            let mut rs: Vec<&AirportRecord> = records.iter().filter(|r| r.airport == airport).collect();
            if rs.is_empty() {
                continue;
            }
            rs.sort_by_key(|r| r.t);
            for w in rs.windows(2) {
                if w[1].t != w[0].t + 1 {
                    return Err(Error::SeriesGap {
                        airport: airport.code(),
                        before: w[0].t,
                        after: w[1].t,
                    });
                }
            }
            let mut rows = Vec::with_capacity(rs.len() * (N_OBSERVED + N_KNOWN + N_TARGETS));
            for r in &rs {
                rows.extend(r.row());
            }
            entities.push(Entity {
                name: airport.code().into(),
                static_ids: vec![airport.index()],
                t0: rs[0].t,
                rows,
            });
        }
        Self::new(VariableSchema::delay(), entities)
    }

    pub fn n_cols(&self) -> usize {
        self.schema.n_past()
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.name == name)
    }

    fn row(&self, entity: usize, t: usize) -> &[f64] {
        let e = &self.entities[entity];
        let n = self.n_cols();
        &e.rows[(t - e.t0) * n..][..n]
    }

    /// Time range `(first, last)` of an entity.
    pub fn time_range(&self, entity: usize) -> (usize, usize) {
        let e = &self.entities[entity];
        (e.t0, e.t0 + e.len(self.n_cols()) - 1)
    }

    /// Raw value of past-variable column `col` at time `t`.
    pub fn value(&self, entity: usize, t: usize, col: usize) -> f64 {
        self.row(entity, t)[col]
    }

    /// Every anchor where both windows fit, entity by entity.
    pub fn windows(&self, k: usize, tau: usize) -> Result<Vec<ForecastSample>> {
        if k == 0 || tau == 0 {
            return Err(Error::InvalidConfig("k and tau must be at least 1".into()));
        }
        let mut out = Vec::new();
        for entity in 0..self.entities.len() {
            let (first, last) = self.time_range(entity);
            let lo = first + k - 1;
            if last < tau || lo + tau > last {
                continue;
            }
            out.extend((lo..=last - tau).map(|anchor| ForecastSample { entity, anchor }));
        }
        Ok(out)
    }

    /// Checks that `sample` fits in the panel for the given window lengths.
    pub fn check_window(&self, sample: ForecastSample, k: usize, tau: usize) -> Result<()> {
        if sample.entity >= self.entities.len() {
            return Err(Error::IndexOutOfRange {
                index: sample.entity,
                len: self.entities.len(),
            });
        }
        let (first, last) = self.time_range(sample.entity);
        if sample.anchor + 1 < first + k {
            return Err(Error::InsufficientHistory {
                anchor: sample.anchor,
                reason: "fewer than k past records",
            });
        }
        if sample.anchor + tau > last {
            return Err(Error::InsufficientHistory {
                anchor: sample.anchor,
                reason: "missing future known inputs",
            });
        }
        Ok(())
    }

    /// Materializes one sample. Past rows come from `a-k+1 ..= a`; future
    /// known inputs and labels from `a+1 ..= a+τ`.
    pub fn encode(&self, sample: ForecastSample, k: usize, tau: usize) -> Result<EncodedSample> {
        self.check_window(sample, k, tau)?;
        let s = &self.schema;
        let mut past = Vec::with_capacity(k * s.n_past());
        for t in sample.past_times(k) {
            past.extend_from_slice(self.row(sample.entity, t));
        }
        let (ko, to) = (s.known_offset(), s.target_offset());
        let mut future = Vec::with_capacity(tau * s.n_future());
        let mut labels = Vec::with_capacity(tau * s.n_targets());
        for t in sample.future_times(tau) {
            let r = self.row(sample.entity, t);
            future.extend_from_slice(&r[ko..to]);
            labels.extend_from_slice(&r[to..]);
        }
        Ok(EncodedSample {
            static_ids: self.entities[sample.entity].static_ids.clone(),
            past,
            future,
            labels,
        })
    }

    /// Splits at `t_split`: training samples have every label before the
    /// boundary, test samples every label at or after it. Test past windows
    /// may reach back before the boundary.
    pub fn temporal_split(&self, samples: &[ForecastSample], tau: usize, t_split: usize) -> Result<Split> {
        let first = self.entities.iter().map(|e| e.t0).min().ok_or(Error::Empty("panel"))?;
        let last = (0..self.entities.len())
            .map(|e| self.time_range(e).1)
            .max()
            .unwrap_or(first);
        if t_split <= first || t_split > last {
            return Err(Error::BoundaryOutOfRange {
                boundary: t_split,
                first,
                last,
            });
        }
        let mut split = Split {
            train: Vec::new(),
            test: Vec::new(),
        };
        for &s in samples {
            if s.anchor + tau < t_split {
                split.train.push(s);
            } else if s.anchor + 1 >= t_split {
                split.test.push(s);
            }
        }
        Ok(split)
    }
}

/// Per-entity, per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<String>,
    pub entities: Vec<String>,
    /// `[entity][column]` means; identity for untouched columns.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// Columns that had zero variance and were left at scale 1.
    pub warnings: Vec<String>,
}

impl NormStats {
    /// Fits on rows with `t < t_end` only.
    pub fn fit(panel: &Panel, t_end: usize) -> Result<Self> {
        let vars = panel.schema.past_vars();
        let n = vars.len();
        let mut stats = NormStats {
            columns: vars.iter().map(|v| v.name.clone()).collect(),
            entities: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
            warnings: Vec::new(),
        };
        for (ei, e) in panel.entities.iter().enumerate() {
            let (first, last) = panel.time_range(ei);
            let end = t_end.min(last + 1);
            if end <= first {
                return Err(Error::Empty("normalization window"));
            }
            let count = (end - first) as f64;
            let mut mean = vec![0.0; n];
            let mut std = vec![1.0; n];
            for (c, v) in vars.iter().enumerate() {
                if !v.kind.is_normalized() {
                    continue;
                }
                let col = (first..end).map(|t| panel.value(ei, t, c));
                let m = col.clone().sum::<f64>() / count;
                let var = col.map(|x| (x - m) * (x - m)).sum::<f64>() / count;
                mean[c] = m;
                let sd = math::sqrt(var);
                if sd > 1e-12 {
                    std[c] = sd;
                } else {
                    stats.warnings.push(format!("{}: {} has zero variance", e.name, v.name));
                }
            }
            stats.entities.push(e.name.clone());
            stats.mean.push(mean);
            stats.std.push(std);
        }
        Ok(stats)
    }

    fn entity(&self, name: &str) -> Result<usize> {
        self.entities
            .iter()
            .position(|e| e == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("no normalization stats for {name}")))
    }

    /// Normalized copy of `panel`.
    pub fn apply(&self, panel: &Panel) -> Result<Panel> {
        let names: Vec<String> = panel.schema.past_vars().into_iter().map(|v| v.name).collect();
        if names != self.columns {
            return Err(Error::SchemaMismatch("normalization columns differ from panel".into()));
        }
        let n = names.len();
        let mut out = panel.clone();
        for e in out.entities.iter_mut() {
            let ei = self.entity(&e.name)?;
            for row in e.rows.chunks_mut(n) {
                for ((v, m), sd) in row.iter_mut().zip(&self.mean[ei]).zip(&self.std[ei]) {
                    *v = (*v - m) / sd;
                }
            }
        }
        Ok(out)
    }

    /// Maps a normalized value of column `col` back to original units.
    pub fn denormalize(&self, entity: &str, col: usize, value: f64) -> Result<f64> {
        let ei = self.entity(entity)?;
        Ok(value * self.std[ei][col] + self.mean[ei][col])
    }

    pub fn normalize(&self, entity: &str, col: usize, value: f64) -> Result<f64> {
        let ei = self.entity(entity)?;
        Ok((value - self.mean[ei][col]) / self.std[ei][col])
    }
}

/// Quarter-hour calendar fields for time index `t`, counting from midnight
/// on 1 January of a non-leap year.
pub fn calendar(t: usize) -> (u8, u8, u8) {
    const DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let qod = t % QUARTERS_PER_DAY;
    let mut day = (t / QUARTERS_PER_DAY) % 365;
    let mut month = 0;
    while day >= DAYS[month] {
        day -= DAYS[month];
        month += 1;
    }
    ((qod / 4) as u8, qod as u8, month as u8 + 1)
}

impl core::fmt::Display for Airport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.code())
    }
}

impl core::str::FromStr for Airport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Airport::from_code(s).ok_or_else(|| Error::SchemaMismatch(format!("unknown airport {s}")))
    }
}

/// Names of the past variables, for reports.
pub fn past_names(schema: &VariableSchema) -> Vec<String> {
    schema.past_vars().into_iter().map(|v| v.name).collect()
}

/// Names of the future variables, for reports.
pub fn future_names(schema: &VariableSchema) -> Vec<String> {
    schema.known.iter().map(|v| v.name.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[3.0, 1.0], 1).unwrap(), vec![3.0, 1.0]);
        assert_eq!(moving_average(&[0., 4., 8., 12.], 4).unwrap(), vec![0., 2., 4., 6.]);
        assert_eq!(moving_average(&[], 4), Err(Error::Empty("moving_average series")));
    }

    #[test]
    fn schema_sizes() {
        let s = VariableSchema::delay();
        assert_eq!(s.observed.len(), 22);
        assert_eq!(s.known.len(), 23);
        assert_eq!(s.n_past(), 47);
        s.validate().unwrap();
    }

    #[test]
    fn calendar_fields() {
        assert_eq!(calendar(0), (0, 0, 1));
        assert_eq!(calendar(95), (23, 95, 1));
        assert_eq!(calendar(31 * 96), (0, 0, 2));
    }
}
