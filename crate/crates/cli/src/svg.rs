//! Standalone SVG charts: scatter marks and polylines on linear axes, colored
//! by test accuracy.
//!
//! The color ramp interpolates linearly in RGB from blue `#2c7bb6` at the low
//! end of the color domain to red `#d7191c` at the high end. Reports use the
//! fixed domain [0, 100] so figures from different runs are comparable.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    ConvergenceLines,
    MeanSigmaScatter,
    DensityCurves,
    StrengthScatter,
    EmbeddingScatter,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::ConvergenceLines => "convergence-lines",
            PlotKind::MeanSigmaScatter => "mean-sigma-scatter",
            PlotKind::DensityCurves => "density-curves",
            PlotKind::StrengthScatter => "strength-scatter",
            PlotKind::EmbeddingScatter => "embedding-scatter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub color_domain: (f64, f64),
}

impl PlotSpec {
    pub fn new(kind: PlotKind, title: &str, x_label: &str, y_label: &str) -> Self {
        PlotSpec { kind, title: title.into(), x_label: x_label.into(), y_label: y_label.into(), color_domain: (0.0, 100.0) }
    }
}

/// One scatter point; `row` is its row in the accompanying CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Mark {
    pub x: f64,
    pub y: f64,
    pub accuracy: f64,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub accuracy: f64,
    /// First CSV row of this series.
    pub row: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotData {
    pub marks: Vec<Mark>,
    pub lines: Vec<Series>,
}

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 380.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 100.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const LOW: (f64, f64, f64) = (44.0, 123.0, 182.0);
const HIGH: (f64, f64, f64) = (215.0, 25.0, 28.0);

/// `#rrggbb` for an accuracy within `domain`; values outside are clamped.
pub fn accuracy_color(acc: f64, domain: (f64, f64)) -> String {
    let span = domain.1 - domain.0;
    let t = if span > 0.0 && acc.is_finite() { ((acc - domain.0) / span).clamp(0.0, 1.0) } else { 0.0 };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(LOW.0, HIGH.0), mix(LOW.1, HIGH.1), mix(LOW.2, HIGH.2))
}

/// Round tick positions (1, 2 or 5 × 10ᵏ) covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, f64) {
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), step)
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    if hi == lo {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders a complete SVG document. Marks are the only `<circle>` elements.
pub fn render_svg(spec: &PlotSpec, data: &PlotData) -> String {
    let xs = data.marks.iter().map(|m| m.x).chain(data.lines.iter().flat_map(|l| l.points.iter().map(|p| p.0)));
    let ys = data.marks.iter().map(|m| m.y).chain(data.lines.iter().flat_map(|l| l.points.iter().map(|p| p.1)));
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-kind="{}">"#,
        spec.kind.as_str()
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );

    // axes
    s.push_str(r##"<g class="axes" stroke="#333333" stroke-width="1" fill="none">"##);
    s.push('\n');
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/>"#);
    let (xt, xstep) = nice_ticks(x0, x1, 6);
    let (yt, ystep) = nice_ticks(y0, y1, 5);
    for &t in &xt {
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#, sx(t), TOP + ph, TOP + ph + 5.0);
    }
    for &t in &yt {
        let _ = writeln!(s, r#"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}"/>"#, sy(t), LEFT - 5.0, LEFT);
    }
    s.push_str("</g>\n");
    s.push_str(r##"<g class="tick-labels" font-family="sans-serif" font-size="10" fill="#333333">"##);
    s.push('\n');
    for &t in &xt {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(t), TOP + ph + 17.0, tick_label(t, xstep));
    }
    for &t in &yt {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, sy(t) + 3.5, tick_label(t, ystep));
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&spec.y_label)
    );

    // data
    s.push_str("<g class=\"data\">\n");
    for l in &data.lines {
        let pts: Vec<String> = l.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-row="{}" points="{}" fill="none" stroke="{}" stroke-width="1.2" stroke-opacity="0.8"/>"#,
            l.row,
            pts.join(" "),
            accuracy_color(l.accuracy, spec.color_domain)
        );
    }
    for m in data.marks.iter().filter(|m| m.x.is_finite() && m.y.is_finite()) {
        let _ = writeln!(
            s,
            r#"<circle class="mark" data-row="{}" cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.85"/>"#,
            m.row,
            sx(m.x),
            sy(m.y),
            accuracy_color(m.accuracy, spec.color_domain)
        );
    }
    s.push_str("</g>\n");

    // legend: vertical gradient bar for the accuracy ramp
    let lx = WIDTH - RIGHT + 24.0;
    let (lo, hi) = spec.color_domain;
    s.push_str("<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">");
    let _ = write!(s, r#"<stop offset="0" stop-color="{}"/>"#, accuracy_color(lo, spec.color_domain));
    let _ = write!(s, r#"<stop offset="1" stop-color="{}"/>"#, accuracy_color(hi, spec.color_domain));
    s.push_str("</linearGradient></defs>\n");
    let _ = writeln!(
        s,
        r##"<g class="legend" font-family="sans-serif" font-size="10"><rect x="{lx}" y="{TOP}" width="14" height="{ph}" fill="url(#ramp)" stroke="#333333"/><text x="{:.2}" y="{:.2}">{}</text><text x="{:.2}" y="{:.2}">{}</text><text x="{lx}" y="{:.2}">test acc. (%)</text></g>"##,
        lx + 18.0,
        TOP + 8.0,
        tick_label(hi, 1.0),
        lx + 18.0,
        TOP + ph,
        tick_label(lo, 1.0),
        TOP - 6.0
    );
    s.push_str("</svg>\n");
    s
}
