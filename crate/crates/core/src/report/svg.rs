//! Standalone SVG figures with fixed-precision coordinates, so identical
//! inputs give byte-identical files.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Round-number ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let bounds = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            match (lo.is_finite(), hi > lo) {
                (false, _) => (0.0, 1.0),
                (true, false) => (lo - 0.5, lo + 0.5),
                (true, true) => {
                    let pad = (hi - lo) * 0.05;
                    (lo - pad, hi + pad)
                }
            }
        };
        let (x0, x1) = bounds(&mut xs.clone());
        let (y0, y1) = bounds(&mut ys.clone());
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        num((W - RIGHT + LEFT) / 2.0),
        esc(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/>"#);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/>"#);
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, r#"<g class="ticks" fill="black">"#);
    for x in ticks(f.x0, f.x1, 8) {
        let px = num(f.px(x));
        let _ = writeln!(out, r#"<line x1="{px}" y1="{b}" x2="{px}" y2="{}" stroke="black"/>"#, b + 4.0);
        let _ = writeln!(out, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, b + 17.0, tick_label(x));
    }
    for y in ticks(f.y0, f.y1, 6) {
        let py = num(f.py(y));
        let _ = writeln!(out, r#"<line x1="{}" y1="{py}" x2="{l}" y2="{py}" stroke="black"/>"#, l - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">{}</text>"#, l - 7.0, tick_label(y));
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num((l + r) / 2.0),
        H - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        num((t + b) / 2.0),
        esc(y_label)
    );
}

fn legend(out: &mut String, entries: &[(&str, &str, bool)]) {
    let x = W - RIGHT + 14.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (i, (label, color, line)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + i as f64 * 20.0;
        if *line {
            let _ = writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 20.0);
        } else {
            let _ = writeln!(out, r#"<circle cx="{}" cy="{y}" r="4" fill="{color}"/>"#, x + 10.0);
        }
        let _ = writeln!(out, r#"<text x="{}" y="{y}" dominant-baseline="middle">{}</text>"#, x + 26.0, esc(label));
    }
    let _ = writeln!(out, "</g>");
}

fn polyline(out: &mut String, f: &Frame, class: &str, style: &str, xs: &[f64], ys: &[f64]) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| y.is_finite())
        .map(|(&x, &y)| format!("{},{}", num(f.px(x)), num(f.py(y))))
        .collect();
    let _ = writeln!(out, r#"<polyline class="{class}" fill="none" {style} points="{}"/>"#, pts.join(" "));
}

/// Per-sample traces in light gray with their mean on top.
#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Shared x coordinates; traces shorter than `x` are drawn over a prefix.
    pub x: Vec<f64>,
    pub traces: Vec<Vec<f64>>,
    pub mean: Option<Vec<f64>>,
    /// Shaded x interval, e.g. a text region.
    pub highlight: Option<(f64, f64)>,
    pub highlight_label: Option<String>,
}

pub fn line_plot(p: &LinePlot) -> String {
    let all_y = p.traces.iter().flatten().chain(p.mean.iter().flatten()).copied().collect::<Vec<_>>();
    let f = Frame::fit(p.x.iter().copied(), all_y.iter().copied());
    let mut out = String::new();
    open(&mut out, &p.title);
    if let Some((a, b)) = p.highlight {
        let (xa, xb) = (f.px(a), f.px(b));
        let _ = writeln!(
            out,
            r##"<rect class="highlight" x="{}" y="{TOP}" width="{}" height="{}" fill="#f6d7a7" opacity="0.6"/>"##,
            num(xa),
            num(xb - xa),
            H - TOP - BOTTOM
        );
    }
    axes(&mut out, &f, &p.x_label, &p.y_label);
    let _ = writeln!(out, r#"<g class="traces">"#);
    for t in &p.traces {
        polyline(&mut out, &f, "trace", r##"stroke="#b0b0b0" stroke-width="1" opacity="0.7""##, &p.x, t);
    }
    let _ = writeln!(out, "</g>");
    if let Some(m) = &p.mean {
        polyline(&mut out, &f, "mean", r##"stroke="#c0392b" stroke-width="2.5""##, &p.x, m);
    }
    let samples = format!("samples (n={})", p.traces.len());
    let mut entries = vec![(samples.as_str(), "#b0b0b0", true)];
    if p.mean.is_some() {
        entries.push(("mean", "#c0392b", true));
    }
    if let (Some(_), Some(label)) = (p.highlight, &p.highlight_label) {
        entries.push((label.as_str(), "#f6d7a7", true));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct ScatterPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

pub fn scatter_plot(p: &ScatterPlot) -> String {
    let pts = || p.series.iter().flat_map(|s| s.points.iter());
    let f = Frame::fit(pts().map(|q| q.0), pts().map(|q| q.1));
    let mut out = String::new();
    open(&mut out, &p.title);
    axes(&mut out, &f, &p.x_label, &p.y_label);
    for s in &p.series {
        let _ = writeln!(out, r#"<g class="series" fill="{}" fill-opacity="0.75">"#, esc(&s.color));
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle class="point" cx="{}" cy="{}" r="3"/>"#, num(f.px(x)), num(f.py(y)));
        }
        let _ = writeln!(out, "</g>");
    }
    let entries: Vec<(&str, &str, bool)> = p.series.iter().map(|s| (s.label.as_str(), s.color.as_str(), false)).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
pub struct HeatmapPanel {
    pub title: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

/// Panels side by side, each scaled to its own min..max on a white-to-red
/// ramp.
pub fn heatmap_grid(title: &str, panels: &[HeatmapPanel]) -> String {
    const PANEL: f64 = 180.0;
    const GAP: f64 = 24.0;
    let per_row = panels.len().clamp(1, 4);
    let n_rows = panels.len().div_ceil(per_row).max(1);
    let w = GAP + per_row as f64 * (PANEL + GAP);
    let h = 40.0 + n_rows as f64 * (PANEL + 40.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, num(w / 2.0), esc(title));
    for (i, p) in panels.iter().enumerate() {
        let ox = GAP + (i % per_row) as f64 * (PANEL + GAP);
        let oy = 56.0 + (i / per_row) as f64 * (PANEL + 40.0);
        let lo = p.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (cw, ch) = (PANEL / p.cols.max(1) as f64, PANEL / p.rows.max(1) as f64);
        let _ = writeln!(out, r#"<g class="panel">"#);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, num(ox + PANEL / 2.0), num(oy - 8.0), esc(&p.title));
        for r in 0..p.rows {
            for c in 0..p.cols {
                let v = p.values[r * p.cols + c];
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                let g = (255.0 * (1.0 - t)).round() as u8;
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" x="{}" y="{}" width="{}" height="{}" fill="rgb(255,{g},{g})"/>"#,
                    num(ox + c as f64 * cw),
                    num(oy + r as f64 * ch),
                    num(cw),
                    num(ch)
                );
            }
        }
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#, num(ox), num(oy));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">min {} / max {}</text>"#,
            num(ox + PANEL / 2.0),
            num(oy + PANEL + 14.0),
            tick_label(if lo.is_finite() { lo } else { 0.0 }),
            tick_label(if hi.is_finite() { hi } else { 0.0 })
        );
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
