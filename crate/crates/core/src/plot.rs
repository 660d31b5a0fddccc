//! Deterministic log-log convergence plots as SVG.

use std::fmt::Write as _;

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    /// `(H, error)` pairs; non-positive values are skipped.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Slopes of order guide lines anchored at the first point of the first
    /// series.
    pub guide_slopes: Vec<f64>,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "H".into(),
            y_label: "error".into(),
            guide_slopes: Vec::new(),
            width: 640.0,
            height: 420.0,
        }
    }
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const MARKERS: [&str; 4] = ["circle", "square", "triangle", "diamond"];
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 55.0]; // left, right, top, bottom

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn marker(out: &mut String, kind: &str, x: f64, y: f64, color: &str) {
    let _ = match kind {
        "circle" => writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#),
        "square" => writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}"/>"#, x - 4.0, y - 4.0),
        "triangle" => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - 5.0,
            x - 5.0,
            y + 4.0,
            x + 5.0,
            y + 4.0
        ),
        _ => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - 5.0,
            x + 5.0,
            y,
            x,
            y + 5.0,
            x - 5.0,
            y
        ),
    };
}

/// Renders a log-log plot. The output depends only on the inputs.
pub fn render_svg(series: &[PlotSeries], style: &PlotStyle) -> Result<String> {
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|&(x, y)| x > 0.0 && y > 0.0).collect();
    if pts.is_empty() {
        return Err(invalid("nothing to plot"));
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0.log10()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.log10()).collect();
    let (mut x0, mut x1) = (lx.iter().copied().fold(f64::MAX, f64::min), lx.iter().copied().fold(f64::MIN, f64::max));
    let (mut y0, mut y1) = (ly.iter().copied().fold(f64::MAX, f64::min), ly.iter().copied().fold(f64::MIN, f64::max));
    x0 = (x0 - 0.1).floor_to(0.5);
    x1 = (x1 + 0.1).ceil_to(0.5);
    y0 = (y0 - 0.1).floor();
    y1 = (y1 + 0.1).ceil();
    let (w, h) = (style.width, style.height);
    let pw = w - MARGIN[0] - MARGIN[1];
    let ph = h - MARGIN[2] - MARGIN[3];
    let sx = |x: f64| MARGIN[0] + (x.log10() - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN[2] + (y1 - y.log10()) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if !style.title.is_empty() {
        let _ = writeln!(out, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(&style.title));
    }
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#,
        MARGIN[0], MARGIN[2]
    );
    // decade ticks
    let mut d = y0 as i32;
    while d as f64 <= y1 {
        let y = sy(10f64.powi(d));
        let _ = writeln!(out, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, MARGIN[0], MARGIN[0] + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, MARGIN[0] - 6.0, y + 4.0);
        d += 1;
    }
    let mut k = (x0 / 2f64.log10()).ceil() as i32;
    while (k as f64) * 2f64.log10() <= x1 + 1e-12 {
        let x = sx(2f64.powi(k));
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#eeeeee"/>"##, MARGIN[2], MARGIN[2] + ph);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">2^{k}</text>"#, MARGIN[2] + ph + 16.0);
        k += 1;
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, MARGIN[0] + pw / 2.0, h - 12.0, esc(&style.x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN[2] + ph / 2.0,
        MARGIN[2] + ph / 2.0,
        esc(&style.y_label)
    );
    let _ = writeln!(out, r#"<g clip-path="none">"#);
    if let Some(&(ax, ay)) = series.first().and_then(|s| s.points.iter().find(|p| p.0 > 0.0 && p.1 > 0.0)) {
        let bx = pts.iter().map(|p| p.0).fold(f64::MAX, f64::min);
        for (i, &slope) in style.guide_slopes.iter().enumerate() {
            let by = ay * (bx / ax).powf(slope);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555555" stroke-dasharray="5,4"/>"##,
                sx(ax),
                sy(ay * 0.5),
                sx(bx),
                sy(by * 0.5)
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" fill="#555555">order {slope}</text>"##,
                sx(bx) + 4.0,
                sy(by * 0.5) + 14.0 * i as f64
            );
        }
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mk = MARKERS[i % MARKERS.len()];
        let valid: Vec<(f64, f64)> = s.points.iter().copied().filter(|&(x, y)| x > 0.0 && y > 0.0).collect();
        if valid.len() > 1 {
            let path: Vec<String> = valid.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        }
        for &(x, y) in &valid {
            marker(&mut out, mk, sx(x), sy(y), color);
        }
        let ly = MARGIN[2] + 16.0 + 16.0 * i as f64;
        let lx = MARGIN[0] + pw - 150.0;
        marker(&mut out, mk, lx, ly - 4.0, color);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 10.0, esc(&s.label));
    }
    let _ = writeln!(out, "</g>\n</svg>");
    Ok(out)
}

trait Snap {
    fn floor_to(self, step: f64) -> f64;
    fn ceil_to(self, step: f64) -> f64;
}

impl Snap for f64 {
    fn floor_to(self, step: f64) -> f64 {
        (self / step).floor() * step
    }
    fn ceil_to(self, step: f64) -> f64 {
        (self / step).ceil() * step
    }
}
