//! Minimal self-contained SVG charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        let pad = ((y1 - y0) * 0.05).max(1e-12);
        Self { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=4 {
        let fx = k as f64 / 4.0;
        let x = f.x0 + fx * (f.x1 - f.x0);
        let y = f.y0 + fx * (f.y1 - f.y0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, f.px(x), b + 16.0, tick(x));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, f.py(y) + 4.0, tick(y));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 10.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{:.4}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut out = String::new();
    axes(&mut out, &f, title, xlabel, ylabel);
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        if series.len() > 1 {
            let y = TOP + 16.0 + 16.0 * k as f64;
            let _ = writeln!(out, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, W - RIGHT - 120.0, W - RIGHT - 100.0);
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT - 94.0, y + 4.0, escape(&s.name));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Equal-width bins over `[0, max]`; returns `(lower edge, count)` pairs.
pub fn bins(values: &[f64], count: usize) -> Vec<(f64, usize)> {
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let width = if max > 0.0 { max / count as f64 } else { 1.0 };
    let mut out: Vec<(f64, usize)> = (0..count).map(|k| (k as f64 * width, 0)).collect();
    for &v in values.iter().filter(|v| v.is_finite()) {
        let k = ((v / width) as usize).min(count - 1);
        out[k].1 += 1;
    }
    out
}

pub fn histogram(title: &str, xlabel: &str, values: &[f64], count: usize) -> String {
    let b = bins(values, count.max(1));
    let width = if b.len() > 1 { b[1].0 - b[0].0 } else { 1.0 };
    let top = b.iter().map(|x| x.1).max().unwrap_or(0) as f64;
    let f = Frame { x0: 0.0, x1: width * b.len() as f64, y0: 0.0, y1: top.max(1.0) * 1.05 };
    let mut out = String::new();
    axes(&mut out, &f, title, xlabel, "count");
    for &(lo, n) in &b {
        let (x0, x1) = (f.px(lo), f.px(lo + width));
        let (y0, y1) = (f.py(n as f64), f.py(0.0));
        let _ = writeln!(out, r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##, x1 - x0, y1 - y0);
    }
    out.push_str("</svg>\n");
    out
}
