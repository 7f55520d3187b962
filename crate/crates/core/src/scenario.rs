//! Mechanistic synthetic data generator.
//!
//! Weather: storm cells are born as a Poisson process, drift at constant
//! velocity and rise and decay over their lifetime. A cell contributes
//! `peak · sin(π·age/life) · (1 - (d/r)²)²` inside radius `r`; contributions
//! add and are clamped to 1. VIL is `round(6·I)` and ET is
//! `round(14·I·top)`, where `top` is the bump-weighted storm top in
//! `[0.7, 1]`.
//!
//! Local severity of an airport is the mean `VIL/6` over a square window
//! around it. Per quarter hour:
//!
//! - demand follows a two-peak diurnal curve plus truncated Gaussian noise;
//! - `AAR = clear_AAR · (1 - α·sev)`, `ADR = clear_ADR · (1 - α_d·sev)`;
//! - FCA flags fire when the mean severity of their tile of a 3×3 region
//!   grid exceeds `fca_severity`; the ZNY inbound and outbound reroutes watch
//!   the western column band and the southern row band;
//! - GDP fires when `sev > gdp_severity` or `arr_demand / AAR > gdp_ratio`,
//!   GS when `sev > gs_severity`, the airport reroutes when the airport's
//!   tile exceeds `reroute_severity` (inbound) or `2·reroute_severity`
//!   (outbound);
//! - `AAR_eff = AAR · (1 - 0.15·inbound_reroute)`;
//! - `dep_t = max(0, ρ·dep_{t-1} + β·max(0, dep_demand - ADR) + γ·sev + δ·GS + ε)`,
//!   `arr_t = max(0, ρ·arr_{t-1} + β·max(0, arr_demand - AAR_eff) + γ·sev - relief·GDP + ε)`;
//! - movements are `min(demand, rate)` plus noise, on-time percentage is
//!   `100·exp(-delay/25)`.
//!
//! Each mechanism draws from its own seed substream. Weather features in the
//! returned records are zero until filled by [`fill_weather_features`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{self, Airport, AirportRecord, N_SHARED_TMI, N_TMI, N_WX};
use crate::math;
use crate::seed;
use crate::wx::{WeatherGrid, ET_MAX, VIL_MAX};

const PI: f64 = core::f64::consts::PI;

/// Airport placement and traffic scale. Rates are per quarter hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirportSite {
    pub airport: Airport,
    /// Position as fractions of the grid height and width.
    pub row: f64,
    pub col: f64,
    pub clear_aar: f64,
    pub clear_adr: f64,
    /// Demand at the diurnal peak.
    pub peak_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormParams {
    /// Expected births per quarter hour.
    pub birth_rate: f64,
    pub radius: (f64, f64),
    pub lifetime: (usize, usize),
    pub peak: (f64, f64),
    /// Largest drift speed in cells per quarter hour.
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    /// Hours of the morning and evening peaks.
    pub peaks: (f64, f64),
    pub width_hours: f64,
    /// Night floor as a fraction of the peak.
    pub floor: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityParams {
    pub alpha_arr: f64,
    pub alpha_dep: f64,
    /// Half-width in cells of the severity window.
    pub severity_radius: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmiThresholds {
    pub fca_severity: f64,
    pub zny_severity: f64,
    pub gdp_severity: f64,
    pub gdp_ratio: f64,
    pub gs_severity: f64,
    pub reroute_severity: f64,
    /// When false no TMI is ever issued.
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    pub rho: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Departure delay added by a ground stop.
    pub delta: f64,
    /// Arrival delay removed by a ground delay program.
    pub relief: f64,
    pub noise_sd: f64,
    pub movement_noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Number of quarter hours.
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub airports: Vec<AirportSite>,
    pub storms: StormParams,
    pub demand: DemandParams,
    pub capacity: CapacityParams,
    pub tmi: TmiThresholds,
    pub delay: DelayParams,
    /// Trailing window of the smoothed targets.
    pub ma_window: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let site = |airport, row, col, aar: f64, adr: f64| AirportSite {
            airport,
            row,
            col,
            clear_aar: aar,
            clear_adr: adr,
            peak_demand: 0.95 * aar.min(adr),
        };
        Self {
            seed: 2019,
            steps: 6000,
            height: 96,
            width: 112,
            airports: vec![
                site(Airport::Lga, 0.36, 0.58, 10.0, 10.0),
                site(Airport::Jfk, 0.45, 0.64, 12.0, 12.0),
                site(Airport::Ewr, 0.40, 0.50, 11.0, 11.0),
                site(Airport::Phl, 0.72, 0.22, 9.0, 9.0),
            ],
            storms: StormParams {
                birth_rate: 0.09,
                radius: (12.0, 30.0),
                lifetime: (16, 48),
                peak: (0.5, 1.0),
                max_speed: 0.8,
            },
            demand: DemandParams {
                peaks: (8.5, 17.5),
                width_hours: 2.5,
                floor: 0.15,
                noise_sd: 0.8,
            },
            capacity: CapacityParams {
                alpha_arr: 0.6,
                alpha_dep: 0.5,
                severity_radius: 4,
            },
            tmi: TmiThresholds {
                fca_severity: 0.08,
                zny_severity: 0.12,
                gdp_severity: 0.25,
                gdp_ratio: 1.2,
                gs_severity: 0.5,
                reroute_severity: 0.15,
                enabled: true,
            },
            delay: DelayParams {
                rho: 0.85,
                beta: 3.0,
                gamma: 25.0,
                delta: 10.0,
                relief: 3.0,
                noise_sd: 2.0,
                movement_noise_sd: 0.5,
            },
            ma_window: 4,
        }
    }
}

impl ScenarioConfig {
    /// Delays driven by weather alone: no congestion term, no capacity loss
    /// and no TMIs, so weather reaches the targets only through the
    /// observed weather features.
    pub fn weather_dominated(mut self) -> Self {
        self.delay.beta = 0.0;
        self.delay.delta = 0.0;
        self.delay.relief = 0.0;
        self.capacity.alpha_arr = 0.0;
        self.capacity.alpha_dep = 0.0;
        self.tmi.enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.steps < 2 {
            return bad(format!("steps must be at least 2, got {}", self.steps));
        }
        if self.height == 0 || self.width == 0 {
            return bad("grid must be non-empty".into());
        }
        if self.airports.is_empty() {
            return bad("at least one airport is required".into());
        }
        for (i, s) in self.airports.iter().enumerate() {
            if !(0.0..1.0).contains(&s.row) || !(0.0..1.0).contains(&s.col) {
                return bad(format!("{} lies outside the grid", s.airport.code()));
            }
            if !(s.clear_aar > 0.0 && s.clear_adr > 0.0 && s.peak_demand >= 0.0) {
                return bad(format!("{} rates must be positive", s.airport.code()));
            }
            if self.airports[..i].iter().any(|o| o.airport == s.airport) {
                return bad(format!("{} listed twice", s.airport.code()));
            }
        }
        let st = &self.storms;
        if !(st.birth_rate >= 0.0 && st.birth_rate.is_finite()) {
            return bad("birth rate must be non-negative".into());
        }
        if !(st.radius.0 > 0.0 && st.radius.0 <= st.radius.1) {
            return bad("storm radius range invalid".into());
        }
        if !(st.lifetime.0 >= 1 && st.lifetime.0 <= st.lifetime.1) {
            return bad("storm lifetime range invalid".into());
        }
        if !(st.peak.0 >= 0.0 && st.peak.0 <= st.peak.1 && st.peak.1 <= 1.0) {
            return bad("storm peak range must lie in [0, 1]".into());
        }
        let non_neg = [
            st.max_speed,
            self.demand.noise_sd,
            self.demand.width_hours,
            self.delay.noise_sd,
            self.delay.movement_noise_sd,
            self.delay.beta,
            self.delay.gamma,
            self.delay.delta,
            self.delay.relief,
            self.delay.rho,
        ];
        if non_neg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise, speed and delay coefficients must be non-negative".into());
        }
        if self.delay.rho >= 1.0 {
            return bad("rho must be below 1".into());
        }
        if !(0.0..=1.0).contains(&self.capacity.alpha_arr) || !(0.0..=1.0).contains(&self.capacity.alpha_dep) {
            return bad("capacity sensitivities must lie in [0, 1]".into());
        }
        if self.ma_window == 0 {
            return bad("ma_window must be at least 1".into());
        }
        Ok(())
    }

    fn site_cell(&self, s: &AirportSite) -> (usize, usize) {
        (
            (s.row * self.height as f64) as usize,
            (s.col * self.width as f64) as usize,
        )
    }
}

/// State of one storm cell at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormState {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
    /// Current peak intensity in `[0, 1]`.
    pub intensity: f64,
    pub top: f64,
}

#[derive(Debug, Clone, Copy)]
struct Storm {
    row: f64,
    col: f64,
    v_row: f64,
    v_col: f64,
    radius: f64,
    peak: f64,
    top: f64,
    age: usize,
    life: usize,
}

impl Storm {
    fn state(&self) -> StormState {
        StormState {
            row: self.row,
            col: self.col,
            radius: self.radius,
            intensity: self.peak * math::sin(PI * (self.age as f64 + 0.5) / self.life as f64),
            top: self.top,
        }
    }
}

/// Bump profile `(1 - (d/r)²)²` inside the radius, zero outside.
pub fn bump(distance: f64, radius: f64) -> f64 {
    if distance >= radius {
        return 0.0;
    }
    let u = 1.0 - (distance / radius) * (distance / radius);
    u * u
}

/// Rasterizes storm states into a grid.
pub fn render(timestamp: usize, height: usize, width: usize, storms: &[StormState]) -> WeatherGrid {
    let n = height * width;
    let mut intensity = vec![0.0; n];
    let mut top_mass = vec![0.0; n];
    for s in storms {
        if s.intensity <= 0.0 {
            continue;
        }
        let r0 = math::floor(s.row - s.radius).max(0.0) as usize;
        let r1 = (math::floor(s.row + s.radius) + 1.0).clamp(0.0, height as f64) as usize;
        let c0 = math::floor(s.col - s.radius).max(0.0) as usize;
        let c1 = (math::floor(s.col + s.radius) + 1.0).clamp(0.0, width as f64) as usize;
        for r in r0..r1 {
            for c in c0..c1 {
                let dr = r as f64 - s.row;
                let dc = c as f64 - s.col;
                let v = s.intensity * bump(math::sqrt(dr * dr + dc * dc), s.radius);
                if v > 0.0 {
                    intensity[r * width + c] += v;
                    top_mass[r * width + c] += v * s.top;
                }
            }
        }
    }
    let mut vil = Vec::with_capacity(n);
    let mut et = Vec::with_capacity(n);
    for i in 0..n {
        let level = intensity[i].min(1.0);
        let top = if intensity[i] > 0.0 {
            top_mass[i] / intensity[i]
        } else {
            0.0
        };
        vil.push(math::round(f64::from(VIL_MAX) * level) as u8);
        et.push(math::round(f64::from(ET_MAX) * level * top) as u8);
    }
    WeatherGrid::new(timestamp, height, width, vil, et).expect("levels clamped by construction")
}

/// Generated weather with the storm states behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRun {
    pub grids: Vec<WeatherGrid>,
    pub storms: Vec<Vec<StormState>>,
}

/// Storm simulation over `cfg.steps` quarter hours.
pub fn gen_weather(cfg: &ScenarioConfig) -> Result<WeatherRun> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "weather");
    let st = &cfg.storms;
    let births = (st.birth_rate > 0.0)
        .then(|| Poisson::new(st.birth_rate).map_err(|e| Error::InvalidConfig(format!("{e}"))))
        .transpose()?;
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let mut live: Vec<Storm> = Vec::new();
    let mut run = WeatherRun {
        grids: Vec::with_capacity(cfg.steps),
        storms: Vec::with_capacity(cfg.steps),
    };
    for t in 0..cfg.steps {
        let n_new = births.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_new {
            let angle = rng.random::<f64>() * 2.0 * PI;
            let speed = rng.random::<f64>() * st.max_speed;
            live.push(Storm {
                row: rng.random::<f64>() * h,
                col: rng.random::<f64>() * w,
                v_row: speed * math::sin(angle),
                v_col: speed * math::cos(angle),
                radius: rng.random_range(st.radius.0..=st.radius.1),
                peak: rng.random_range(st.peak.0..=st.peak.1),
                top: rng.random_range(0.7..=1.0),
                age: 0,
                life: rng.random_range(st.lifetime.0..=st.lifetime.1),
            });
        }
        let states: Vec<StormState> = live.iter().map(Storm::state).collect();
        run.grids.push(render(t, cfg.height, cfg.width, &states));
        run.storms.push(states);
        for s in live.iter_mut() {
            s.age += 1;
            s.row += s.v_row;
            s.col += s.v_col;
        }
        live.retain(|s| s.age < s.life);
    }
    Ok(run)
}

/// Mean `VIL/6` over rows `r0..r1` and columns `c0..c1`.
pub fn region_severity(grid: &WeatherGrid, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    let w = grid.width();
    let mut sum = 0u32;
    for r in r0..r1 {
        sum += grid.vil()[r * w + c0..r * w + c1]
            .iter()
            .map(|&v| u32::from(v))
            .sum::<u32>();
    }
    let n = ((r1 - r0) * (c1 - c0)) as f64;
    f64::from(sum) / (f64::from(VIL_MAX) * n)
}

/// Severity in the square window of half-width `radius` around a cell.
pub fn local_severity(grid: &WeatherGrid, row: usize, col: usize, radius: usize) -> f64 {
    region_severity(
        grid,
        row.saturating_sub(radius),
        (row + radius + 1).min(grid.height()),
        col.saturating_sub(radius),
        (col + radius + 1).min(grid.width()),
    )
}

/// Bounds of tile `i` when `n` is cut into `parts` nearly equal pieces.
fn tile(n: usize, parts: usize, i: usize) -> (usize, usize) {
    (i * n / parts, (i + 1) * n / parts)
}

/// Severity of each 3×3 tile, row-major.
pub fn tile_severity(grid: &WeatherGrid) -> [f64; 9] {
    let mut out = [0.0; 9];
    for (i, o) in out.iter_mut().enumerate() {
        let (r0, r1) = tile(grid.height(), 3, i / 3);
        let (c0, c1) = tile(grid.width(), 3, i % 3);
        *o = region_severity(grid, r0, r1, c0, c1);
    }
    out
}

/// Why a TMI flag was raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TmiCause {
    RegionSeverity,
    LocalSeverity,
    DemandRatio,
}

/// One raised flag. `airport` is `None` for the shared enroute flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmiActivation {
    pub t: usize,
    pub airport: Option<Airport>,
    pub tmi: usize,
    pub cause: TmiCause,
    /// The quantity that crossed its threshold.
    pub value: f64,
}

/// Latent quantities behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub storms: Vec<Vec<StormState>>,
    /// `[airport][t]` local severity in `[0, 1]`.
    pub severity: Vec<Vec<f64>>,
    /// `[airport][t]` clear-weather AAR minus realized AAR.
    pub capacity_loss: Vec<Vec<f64>>,
    pub tmi: Vec<TmiActivation>,
}

/// Airport operations driven by the weather grids.
pub fn gen_operations(cfg: &ScenarioConfig, grids: &[WeatherGrid]) -> Result<(Vec<AirportRecord>, GroundTruth)> {
    cfg.validate()?;
    if grids.len() != cfg.steps {
        return Err(Error::LengthMismatch(grids.len(), cfg.steps));
    }
    let tiles: Vec<[f64; 9]> = grids.iter().map(tile_severity).collect();
    let (third_w, third_h) = (tile(cfg.width, 3, 0), tile(cfg.height, 3, 2));
    let mut truth = GroundTruth {
        seed: cfg.seed,
        storms: Vec::new(),
        severity: Vec::new(),
        capacity_loss: Vec::new(),
        tmi: Vec::new(),
    };
    let th = &cfg.tmi;
    let mut shared = vec![[0u8; N_SHARED_TMI]; cfg.steps];
    if th.enabled {
        for (t, grid) in grids.iter().enumerate() {
            for (j, &s) in tiles[t].iter().enumerate() {
                if s > th.fca_severity {
                    shared[t][j] = 1;
                    truth.tmi.push(TmiActivation {
                        t,
                        airport: None,
                        tmi: j,
                        cause: TmiCause::RegionSeverity,
                        value: s,
                    });
                }
            }
            let west = region_severity(grid, 0, cfg.height, third_w.0, third_w.1);
            let south = region_severity(grid, third_h.0, third_h.1, 0, cfg.width);
            for (j, s) in [(9, west), (10, south)] {
                if s > th.zny_severity {
                    shared[t][j] = 1;
                    truth.tmi.push(TmiActivation {
                        t,
                        airport: None,
                        tmi: j,
                        cause: TmiCause::RegionSeverity,
                        value: s,
                    });
                }
            }
        }
    }

    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(format!("{e}")));
    let dp = &cfg.delay;
    let mut records = Vec::with_capacity(cfg.steps * cfg.airports.len());
    for site in &cfg.airports {
        let code = site.airport.code();
        let mut demand_rng = seed::rng(cfg.seed, &format!("demand/{code}"));
        let mut delay_rng = seed::rng(cfg.seed, &format!("delay/{code}"));
        let mut move_rng = seed::rng(cfg.seed, &format!("movements/{code}"));
        let demand_noise = normal(cfg.demand.noise_sd)?;
        let delay_noise = normal(dp.noise_sd)?;
        let move_noise = normal(dp.movement_noise_sd)?;
        let (row, col) = cfg.site_cell(site);
        let site_tile = 3 * (3 * row / cfg.height) + 3 * col / cfg.width;
        let (mut dep, mut arr) = (0.0f64, 0.0f64);
        let mut sev_series = Vec::with_capacity(cfg.steps);
        let mut loss_series = Vec::with_capacity(cfg.steps);
        let first = records.len();
        for (t, grid) in grids.iter().enumerate() {
            let sev = local_severity(grid, row, col, cfg.capacity.severity_radius);
            let (hour, qod, month) = formulation::calendar(t);
            let curve = diurnal(&cfg.demand, f64::from(qod) / 4.0);
            let draw = |rng: &mut ChaCha8Rng| (site.peak_demand * curve + demand_noise.sample(rng)).max(0.0);
            let arr_demand = draw(&mut demand_rng);
            let dep_demand = draw(&mut demand_rng);
            let aar = site.clear_aar * (1.0 - cfg.capacity.alpha_arr * sev);
            let adr = site.clear_adr * (1.0 - cfg.capacity.alpha_dep * sev);

            let mut tmi = [0u8; N_TMI];
            tmi[..N_SHARED_TMI].copy_from_slice(&shared[t]);
            if th.enabled {
                let mut raise = |j: usize, cause, value| {
                    tmi[j] = 1;
                    truth.tmi.push(TmiActivation {
                        t,
                        airport: Some(site.airport),
                        tmi: j,
                        cause,
                        value,
                    });
                };
                let ratio = arr_demand / aar;
                if sev > th.gdp_severity {
                    raise(11, TmiCause::LocalSeverity, sev);
                } else if ratio > th.gdp_ratio {
                    raise(11, TmiCause::DemandRatio, ratio);
                }
                if sev > th.gs_severity {
                    raise(12, TmiCause::LocalSeverity, sev);
                }
                let ts = tiles[t][site_tile];
                if ts > th.reroute_severity {
                    raise(13, TmiCause::RegionSeverity, ts);
                }
                if ts > 2.0 * th.reroute_severity {
                    raise(14, TmiCause::RegionSeverity, ts);
                }
            }
            let aar_eff = aar * (1.0 - 0.15 * f64::from(tmi[13]));

            dep = (dp.rho * dep
                + dp.beta * (dep_demand - adr).max(0.0)
                + dp.gamma * sev
                + dp.delta * f64::from(tmi[12])
                + delay_noise.sample(&mut delay_rng))
            .max(0.0);
            arr = (dp.rho * arr + dp.beta * (arr_demand - aar_eff).max(0.0) + dp.gamma * sev
                - dp.relief * f64::from(tmi[11])
                + delay_noise.sample(&mut delay_rng))
            .max(0.0);
            let arrivals = (arr_demand.min(aar_eff) + move_noise.sample(&mut move_rng)).max(0.0);
            let departures = (dep_demand.min(adr) + move_noise.sample(&mut move_rng)).max(0.0);

            sev_series.push(sev);
            loss_series.push(site.clear_aar - aar);
            records.push(AirportRecord {
                airport: site.airport,
                t,
                arrivals,
                departures,
                arr_delay: arr,
                dep_delay: dep,
                arr_otp: on_time(arr),
                dep_otp: on_time(dep),
                wx: [0.0; N_WX],
                arr_demand,
                dep_demand,
                aar,
                adr,
                aar_eff,
                tmi,
                hour,
                qod,
                month,
                dep_delay_ma: 0.0,
                arr_delay_ma: 0.0,
            });
        }
        let rs = &mut records[first..];
        let dep_ma = formulation::moving_average(&rs.iter().map(|r| r.dep_delay).collect::<Vec<_>>(), cfg.ma_window)?;
        let arr_ma = formulation::moving_average(&rs.iter().map(|r| r.arr_delay).collect::<Vec<_>>(), cfg.ma_window)?;
        for (r, (d, a)) in rs.iter_mut().zip(dep_ma.into_iter().zip(arr_ma)) {
            r.dep_delay_ma = d;
            r.arr_delay_ma = a;
        }
        truth.severity.push(sev_series);
        truth.capacity_loss.push(loss_series);
    }
    truth.tmi.sort_by_key(|a| (a.t, a.airport, a.tmi));
    Ok((records, truth))
}

fn on_time(delay: f64) -> f64 {
    100.0 * math::exp(-delay / 25.0)
}

/// Demand curve in `[floor, 1]` at a fractional hour of day.
pub fn diurnal(p: &DemandParams, hour: f64) -> f64 {
    let peak = |c: f64| {
        let d = (hour - c) / p.width_hours;
        math::exp(-0.5 * d * d)
    };
    p.floor + (1.0 - p.floor) * peak(p.peaks.0).max(peak(p.peaks.1))
}

/// Writes per-timestamp weather features into the records. `features[t]`
/// belongs to time index `t`.
pub fn fill_weather_features(records: &mut [AirportRecord], features: &[Vec<f64>]) -> Result<()> {
    for r in records.iter_mut() {
        let f = features.get(r.t).ok_or(Error::IndexOutOfRange {
            index: r.t,
            len: features.len(),
        })?;
        if f.len() != N_WX {
            return Err(Error::LengthMismatch(f.len(), N_WX));
        }
        r.wx.copy_from_slice(f);
    }
    Ok(())
}

/// Everything one seed produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grids: Vec<WeatherGrid>,
    pub records: Vec<AirportRecord>,
    pub truth: GroundTruth,
}

/// Weather and operations, with weather features from the fixed pooling
/// statistics of [`crate::wx::fallback_features`].
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    let weather = gen_weather(cfg)?;
    let (mut records, mut truth) = gen_operations(cfg, &weather.grids)?;
    let features: Vec<Vec<f64>> = weather.grids.iter().map(crate::wx::fallback_features).collect();
    fill_weather_features(&mut records, &features)?;
    truth.storms = weather.storms;
    Ok(Scenario {
        grids: weather.grids,
        records,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            steps: 400,
            height: 48,
            width: 56,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn zero_birth_rate_gives_empty_sky() {
        let mut cfg = small();
        cfg.storms.birth_rate = 0.0;
        let run = gen_weather(&cfg).unwrap();
        assert!(run.grids.iter().all(|g| g.vil().iter().chain(g.et()).all(|&v| v == 0)));
    }

    #[test]
    fn bump_profile() {
        assert_eq!(bump(0.0, 5.0), 1.0);
        assert_eq!(bump(5.0, 5.0), 0.0);
        assert!((bump(2.5, 5.0) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn storm_over_airport_dominates_clear_points() {
        let storm = StormState {
            row: 20.0,
            col: 20.0,
            radius: 8.0,
            intensity: 0.9,
            top: 0.9,
        };
        let g = render(0, 48, 56, &[storm]);
        assert_eq!(g.vil_at(20, 20), 5);
        assert_eq!(g.vil_at(40, 50), 0);
        assert!(local_severity(&g, 20, 20, 2) > local_severity(&g, 40, 50, 2));
    }

    #[test]
    fn diurnal_peaks() {
        let p = ScenarioConfig::default().demand;
        assert!((diurnal(&p, 8.5) - 1.0).abs() < 1e-12);
        assert!(diurnal(&p, 1.0) < 0.2);
    }
}
