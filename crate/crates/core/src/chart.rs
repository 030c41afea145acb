//! Plain SVG line charts of study and profile tables.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::sim::{BASELINE_AGGREGATED, BASELINE_NONE};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Estimates,
    Mse,
    Risk,
    Tradeoff,
    WidthRatio,
}

impl FromStr for ChartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "estimates" => ChartKind::Estimates,
            "mse" => ChartKind::Mse,
            "risk" => ChartKind::Risk,
            "tradeoff" => ChartKind::Tradeoff,
            "widthratio" => ChartKind::WidthRatio,
            _ => return Err(Error::invalid(format!("unknown chart kind '{s}'"))),
        })
    }
}

impl ChartKind {
    pub fn required_columns(&self) -> &'static [&'static str] {
        match self {
            ChartKind::Estimates => &["kernel", "lambda", "mean_beta", "true_beta"],
            ChartKind::Mse => &["kernel", "lambda", "mse"],
            ChartKind::Risk => &["kernel", "lambda", "risk"],
            ChartKind::Tradeoff => &["kernel", "lambda", "mse", "risk"],
            ChartKind::WidthRatio => &["kernel", "lambda", "width_ratio"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines.
    pub references: Vec<(String, f64)>,
    /// Single highlighted points.
    pub markers: Vec<(String, f64, f64)>,
}

/// The subset of study/profile columns the charts read.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlotRow {
    pub kernel: String,
    pub lambda: f64,
    #[serde(default)]
    pub true_beta: Option<f64>,
    #[serde(default)]
    pub mean_beta: Option<f64>,
    #[serde(default)]
    pub mse: Option<f64>,
    #[serde(default)]
    pub width_ratio: Option<f64>,
    #[serde(default)]
    pub risk: Option<f64>,
}

impl From<&crate::sim::StudyRow> for PlotRow {
    fn from(r: &crate::sim::StudyRow) -> Self {
        PlotRow {
            kernel: r.kernel.clone(),
            lambda: r.lambda,
            true_beta: Some(r.true_beta),
            mean_beta: Some(r.mean_beta),
            mse: Some(r.mse),
            width_ratio: Some(r.width_ratio),
            risk: r.risk,
        }
    }
}

/// Reads a study or profile CSV, failing with the list of columns the kind needs but the file lacks.
pub fn read_plot_rows<R: std::io::Read>(reader: R, kind: ChartKind) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let missing: Vec<&str> = kind
        .required_columns()
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("missing column(s): {}", missing.join(", "))));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<PlotRow>, _>>()?;
    Ok(rows)
}

fn kernels_in_order(rows: &[PlotRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if r.kernel != BASELINE_NONE && r.kernel != BASELINE_AGGREGATED && !out.contains(&r.kernel) {
            out.push(r.kernel.clone());
        }
    }
    out
}

fn by_kernel(rows: &[PlotRow], x: impl Fn(&PlotRow) -> Option<f64>, y: impl Fn(&PlotRow) -> Option<f64>) -> Vec<Series> {
    kernels_in_order(rows)
        .into_iter()
        .map(|k| {
            let mut points: Vec<(f64, f64, f64)> = rows
                .iter()
                .filter(|r| r.kernel == k)
                .filter_map(|r| Some((r.lambda, x(r)?, y(r)?)))
                .filter(|(_, a, b)| a.is_finite() && b.is_finite())
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: k,
                points: points.into_iter().map(|(_, a, b)| (a, b)).collect(),
            }
        })
        .filter(|s| !s.points.is_empty())
        .collect()
}

pub fn chart_for(rows: &[PlotRow], kind: ChartKind) -> Result<Chart> {
    let lambda = |r: &PlotRow| Some(r.lambda);
    let baseline = |name: &str, f: fn(&PlotRow) -> Option<f64>| rows.iter().find(|r| r.kernel == name).and_then(f);
    let mut chart = match kind {
        ChartKind::Estimates => {
            let mut c = Chart {
                title: "Mean coefficient estimate".into(),
                x_label: "lambda".into(),
                y_label: "estimate".into(),
                series: by_kernel(rows, lambda, |r| r.mean_beta),
                ..Chart::default()
            };
            if let Some(b) = rows.iter().find_map(|r| r.true_beta) {
                c.references.push(("true beta".into(), b));
            }
            if let Some(b) = baseline(BASELINE_AGGREGATED, |r| r.mean_beta) {
                c.references.push(("aggregated".into(), b));
            }
            c
        }
        ChartKind::Mse => Chart {
            title: "Mean squared error (naive variance)".into(),
            x_label: "lambda".into(),
            y_label: "MSE".into(),
            series: by_kernel(rows, lambda, |r| r.mse),
            ..Chart::default()
        },
        ChartKind::Risk => Chart {
            title: "Identification disclosure risk".into(),
            x_label: "lambda".into(),
            y_label: "risk".into(),
            series: by_kernel(rows, lambda, |r| r.risk),
            ..Chart::default()
        },
        ChartKind::Tradeoff => Chart {
            title: "Risk versus MSE".into(),
            x_label: "MSE".into(),
            y_label: "risk".into(),
            series: by_kernel(rows, |r| r.mse, |r| r.risk),
            ..Chart::default()
        },
        ChartKind::WidthRatio => {
            let mut c = Chart {
                title: "Naive / percentile interval width".into(),
                x_label: "lambda".into(),
                y_label: "width ratio".into(),
                series: by_kernel(rows, lambda, |r| r.width_ratio),
                ..Chart::default()
            };
            if let Some(w) = baseline(BASELINE_NONE, |r| r.width_ratio).filter(|w| w.is_finite()) {
                c.markers.push(("unmasked".into(), 0.0, w));
            }
            c.references.push(("ratio 1".into(), 1.0));
            c
        }
    };
    if chart.series.is_empty() {
        return Err(Error::invalid("no data to plot: every series is empty"));
    }
    chart.series.truncate(PALETTE.len());
    Ok(chart)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.into()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(chart: &Chart) -> Result<String> {
    if chart.series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::invalid("no data to plot: every series is empty"));
    }
    let xs = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .chain(chart.markers.iter().map(|m| m.1));
    let ys = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .chain(chart.references.iter().map(|r| r.1))
        .chain(chart.markers.iter().map(|m| m.2));
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&chart.title));
    let _ = writeln!(
        w,
        r#"<g class="axes" stroke="black"><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/></g>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph,
        TOP + ph
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(fx),
            TOP + ph + 18.0,
            fmt_tick(fx)
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(fy) + 4.0,
            fmt_tick(fy)
        );
    }
    let _ = writeln!(
        w,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        w,
        r#"<text class="y-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );
    for (name, y) in &chart.references {
        let _ = writeln!(
            w,
            r##"<line class="reference" x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#777" stroke-dasharray="5,4"/><text x="{:.2}" y="{:.2}" fill="#555">{}</text>"##,
            sy(*y),
            LEFT + pw,
            sy(*y),
            LEFT + pw + 4.0,
            sy(*y) + 4.0,
            escape(name)
        );
    }
    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(
            w,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            escape(&s.name),
            pts.join(" ")
        );
        for (x, y) in &s.points {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(*x), sy(*y));
        }
        let ly = TOP + 16.0 * i as f64;
        let _ = writeln!(
            w,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + pw + 10.0,
            LEFT + pw + 30.0,
            LEFT + pw + 36.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    for (name, x, y) in &chart.markers {
        let _ = writeln!(
            w,
            r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="5" fill="black"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            sx(*x),
            sy(*y),
            sx(*x) + 8.0,
            sy(*y) - 6.0,
            escape(name)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(out)
}
