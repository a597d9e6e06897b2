//! Plain SVG output: embedding scatter plots and log-log metric curves.
//! Coordinates are printed at fixed precision so equal inputs give equal
//! bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Embedding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureSpec {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub point_size: f64,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Default for FigureSpec {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 640.0,
            margin: 48.0,
            point_size: 1.5,
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(spec: &FigureSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#,
        w = spec.width,
        h = spec.height
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !spec.title.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
            spec.width / 2.0,
            spec.margin / 2.0,
            esc(&spec.title)
        );
    }
    if !spec.x_label.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            spec.width / 2.0,
            spec.height - spec.margin / 4.0,
            esc(&spec.x_label)
        );
    }
    if !spec.y_label.is_empty() {
        let (x, y) = (spec.margin / 4.0 + 6.0, spec.height / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle" transform="rotate(-90 {x:.1} {y:.1})">{}</text>"#,
            esc(&spec.y_label)
        );
    }
    out
}

/// Scatter of a 2-D embedding with one scale on both axes.
pub fn scatter_svg(emb: &Embedding, spec: &FigureSpec) -> Result<String> {
    if emb.dim() != 2 {
        return Err(Error::InvalidConfig(format!(
            "scatter plots need a 2-D embedding, got s = {}",
            emb.dim()
        )));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in emb.points().rows() {
        for c in 0..2 {
            lo[c] = lo[c].min(r[c]);
            hi[c] = hi[c].max(r[c]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
    let side = (spec.width.min(spec.height) - 2.0 * spec.margin).max(1.0);
    let scale = side / span;
    let cx = spec.width / 2.0 - scale * (lo[0] + hi[0]) / 2.0;
    let cy = spec.height / 2.0 + scale * (lo[1] + hi[1]) / 2.0;

    let mut out = open(spec);
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="none" stroke="#999"/>"##,
        (spec.width - side) / 2.0,
        (spec.height - side) / 2.0
    );
    let _ = writeln!(out, r##"<g fill="#1f4e79" fill-opacity="0.7">"##);
    for r in emb.points().rows() {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}"/>"#,
            cx + scale * r[0],
            cy - scale * r[1],
            spec.point_size
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    /// `(n, value)`; non-positive values are skipped on log axes.
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f4e79", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#555555"];

/// Log-log curves of metrics against `n`.
pub fn curves_svg(series: &[Series], spec: &FigureSpec) -> Result<String> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidConfig("no positive points to plot".into()));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = fold(|p| p.0.log10());
    let (y0, y1) = fold(|p| p.1.log10());
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let m = spec.margin;
    let (w, h) = (spec.width - 2.0 * m, spec.height - 2.0 * m);
    let px = |x: f64| m + w * (x.log10() - x0) / (x1 - x0);
    let py = |y: f64| m + h * (1.0 - (y.log10() - y0) / (y1 - y0));

    let mut out = open(spec);
    let _ = writeln!(out, r##"<rect x="{m:.2}" y="{m:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#999"/>"##);
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in &xs {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            px(*x),
            m + h + 16.0
        );
    }
    for e in (y0 as i32)..=(y1 as i32) {
        let y = 10f64.powi(e);
        let _ = writeln!(
            out,
            r##"<line x1="{m:.2}" x2="{:.2}" y1="{yy:.2}" y2="{yy:.2}" stroke="#eee"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            m + w,
            m - 4.0,
            py(y) + 4.0,
            yy = py(y)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        if path.is_empty() {
            continue;
        }
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for p in &path {
            let (a, b) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, r#"<circle cx="{a}" cy="{b}" r="{:.2}" fill="{color}"/>"#, spec.point_size + 1.5);
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            m + 8.0,
            m + 16.0 + 14.0 * k as f64,
            esc(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
