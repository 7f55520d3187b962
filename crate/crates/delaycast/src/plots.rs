//! SVG charts of forecasts, variable importance and attention by lag.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};
use crate::fsutil;

const SIZE: (u32, u32) = (900, 420);

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(format!("plot: {e}"))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn save(path: &Path, svg: String) -> Result<()> {
    fsutil::write(path, svg.as_bytes())
}

/// One forecast series: actual values against the median and the 25–75 band.
pub struct SeriesPlot<'a> {
    pub title: &'a str,
    pub t: &'a [f64],
    pub actual: &'a [f64],
    pub lower: &'a [f64],
    pub median: &'a [f64],
    pub upper: &'a [f64],
}

pub fn actual_vs_predicted(path: &Path, s: &SeriesPlot<'_>) -> Result<()> {
    let n = s.t.len();
    if [s.actual.len(), s.lower.len(), s.median.len(), s.upper.len()] != [n; 4] || n == 0 {
        return Err(CliError::Data("series lengths differ or are empty".into()));
    }
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let (x0, x1) = range(s.t.iter().copied());
        let all = s.actual.iter().chain(s.lower).chain(s.upper).chain(s.median).copied();
        let (y0, y1) = range(all);
        let mut chart = ChartBuilder::on(&root)
            .caption(s.title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("quarter hour")
            .y_desc("delay (min)")
            .draw()
            .map_err(plot_err)?;
        let pts = |ys: &[f64]| s.t.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
        let band = RGBColor(120, 160, 220);
        chart
            .draw_series(LineSeries::new(pts(s.lower), band.stroke_width(1)))
            .map_err(plot_err)?
            .label("q25 / q75")
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], band));
        chart
            .draw_series(LineSeries::new(pts(s.upper), band.stroke_width(1)))
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts(s.median), BLUE.stroke_width(2)))
            .map_err(plot_err)?
            .label("predicted (median)")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
        chart
            .draw_series(LineSeries::new(pts(s.actual), BLACK.stroke_width(2)))
            .map_err(plot_err)?
            .label("actual")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    save(path, svg)
}

/// Horizontal bars, largest first.
pub fn importance_bars(path: &Path, title: &str, vars: &[(String, f64)]) -> Result<()> {
    if vars.is_empty() {
        return Err(CliError::Data("no variables to plot".into()));
    }
    let n = vars.len();
    let height = (60 + 18 * n as u32).max(200);
    let x1 = vars.iter().map(|v| v.1).fold(0.0f64, f64::max).max(1e-9) * 1.1;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (SIZE.0, height)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(170)
            .build_cartesian_2d(0.0..x1, 0.0..n as f64)
            .map_err(plot_err)?;
        let label = |y: &f64| {
            let i = n as f64 - y.floor() - 1.0;
            if y.fract() == 0.0 && i >= 0.0 {
                vars.get(i as usize).map(|v| v.0.clone()).unwrap_or_default()
            } else {
                String::new()
            }
        };
        chart
            .configure_mesh()
            .disable_y_mesh()
            .y_labels(n + 1)
            .y_label_formatter(&|y| label(&(y - 0.5)))
            .x_desc("mean selection weight")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(vars.iter().enumerate().map(|(i, (_, w))| {
                let y = (n - 1 - i) as f64;
                Rectangle::new([(0.0, y + 0.15), (*w, y + 0.85)], BLUE.mix(0.7).filled())
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    save(path, svg)
}

/// Attention weight against lag, past lags negative.
pub fn attention_by_lag(path: &Path, lags: &[(i64, f64)]) -> Result<()> {
    if lags.is_empty() {
        return Err(CliError::Data("no lags to plot".into()));
    }
    let (x0, x1) = (lags[0].0 as f64 - 0.5, lags[lags.len() - 1].0 as f64 + 0.5);
    let (_, y1) = range(lags.iter().map(|l| l.1));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Attention weight by lag (past < 0, future > 0)", ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d(x0..x1, 0.0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("lag (quarter hours)")
            .y_desc("mean attention")
            .draw()
            .map_err(plot_err)?;
        let pts: Vec<(f64, f64)> = lags.iter().map(|&(l, w)| (l as f64, w)).collect();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), BLUE.stroke_width(2)))
            .map_err(plot_err)?;
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    save(path, svg)
}
