//! Small hand-written SVG charts.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const FONT: &str = "font-family=\"sans-serif\"";

pub struct Canvas {
    width: f64,
    height: f64,
    body: String,
}

impl Canvas {
    pub fn new(width: f64, height: f64) -> Self {
        let mut c = Self {
            width,
            height,
            body: String::new(),
        };
        c.rect(0.0, 0.0, width, height, "#ffffff");
        c
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    pub fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64, opacity: f64) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
            pts.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let s = s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}" {FONT}>{s}</text>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range maps to the midpoint.
fn scale(v: f64, (lo, hi): (f64, f64), (a, b): (f64, f64)) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

/// Viridis-like ramp for `t` in `[0, 1]`.
pub fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 } * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

struct Frame {
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
}

fn axes(c: &mut Canvas, f: &Frame, xr: (f64, f64), yr: (f64, f64), x_label: &str, y_label: &str) {
    c.line((f.left, f.bottom), (f.right, f.bottom), "#333", 1.0);
    c.line((f.left, f.top), (f.left, f.bottom), "#333", 1.0);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let x = f.left + t * (f.right - f.left);
        let y = f.bottom - t * (f.bottom - f.top);
        c.text(x, f.bottom + 16.0, 11.0, "middle", &tick(xr.0 + t * (xr.1 - xr.0)));
        c.text(f.left - 6.0, y + 4.0, 11.0, "end", &tick(yr.0 + t * (yr.1 - yr.0)));
        c.line((f.left, y), (f.right, y), "#eee", 1.0);
    }
    c.text((f.left + f.right) / 2.0, f.bottom + 34.0, 12.0, "middle", x_label);
    c.text(f.left - 46.0, (f.top + f.bottom) / 2.0, 12.0, "middle", y_label);
}

/// Line chart of named `(x, y)` series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut c = Canvas::new(640.0, 400.0);
    let f = Frame {
        left: 70.0,
        top: 40.0,
        right: 500.0,
        bottom: 350.0,
    };
    let xr = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let yr = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let (xr, yr) = if xr.0.is_finite() { (xr, yr) } else { ((0.0, 1.0), (0.0, 1.0)) };
    c.text(320.0, 24.0, 15.0, "middle", title);
    axes(&mut c, &f, xr, yr, x_label, y_label);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mapped: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (scale(x, xr, (f.left, f.right)), scale(y, yr, (f.bottom, f.top))))
            .collect();
        c.polyline(&mapped, color, 2.0, 1.0);
        let ly = f.top + 10.0 + 18.0 * k as f64;
        c.line((f.right + 15.0, ly), (f.right + 35.0, ly), color, 3.0);
        c.text(f.right + 40.0, ly + 4.0, 11.0, "start", name);
    }
    c.finish()
}

/// Row-major matrix as colored cells; `annotate` prints each value in its cell.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, m: &[Vec<f64>], annotate: bool) -> String {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let (w, h) = (520.0, 480.0);
    let (left, top, size_w, size_h) = (70.0, 50.0, 400.0, 380.0);
    let mut c = Canvas::new(w, h);
    c.text(w / 2.0, 28.0, 15.0, "middle", title);
    let (lo, hi) = bounds(m.iter().flatten().copied());
    let (cw, ch) = (size_w / cols.max(1) as f64, size_h / rows.max(1) as f64);
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (left + j as f64 * cw, top + i as f64 * ch);
            c.rect(x, y, cw + 0.05, ch + 0.05, &ramp(scale(v, (lo, hi), (0.0, 1.0))));
            if annotate {
                c.text(x + cw / 2.0, y + ch / 2.0 + 4.0, 11.0, "middle", &tick(v));
            }
        }
    }
    if annotate {
        for j in 0..cols {
            c.text(left + (j as f64 + 0.5) * cw, top - 6.0, 11.0, "middle", &j.to_string());
        }
        for i in 0..rows {
            c.text(left - 6.0, top + (i as f64 + 0.5) * ch + 4.0, 11.0, "end", &i.to_string());
        }
    }
    c.text(left + size_w / 2.0, top + size_h + 30.0, 12.0, "middle", x_label);
    c.text(20.0, top + size_h / 2.0, 12.0, "middle", y_label);
    c.finish()
}

/// One axis of a parallel-coordinates plot.
pub enum Axis {
    Numeric { name: String, values: Vec<f64>, log: bool },
    Categorical { name: String, values: Vec<String> },
}

impl Axis {
    /// Numeric when every value parses, with a log scale for positive values spanning a decade or more.
    pub fn infer(name: &str, raw: &[String]) -> Self {
        let parsed: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
        match parsed {
            Some(values) => {
                let (lo, hi) = bounds(values.iter().copied());
                Axis::Numeric {
                    name: name.to_string(),
                    log: lo > 0.0 && hi / lo >= 10.0,
                    values,
                }
            }
            None => Axis::Categorical {
                name: name.to_string(),
                values: raw.to_vec(),
            },
        }
    }

    fn name(&self) -> &str {
        match self {
            Axis::Numeric { name, .. } | Axis::Categorical { name, .. } => name,
        }
    }

    /// Positions in `[0, 1]` plus the labels to print at the bottom and top.
    fn positions(&self) -> (Vec<f64>, String, String) {
        match self {
            Axis::Numeric { values, log, .. } => {
                let f = |v: f64| if *log { v.log10() } else { v };
                let (lo, hi) = bounds(values.iter().map(|&v| f(v)));
                let pos = values.iter().map(|&v| scale(f(v), (lo, hi), (0.0, 1.0))).collect();
                let (a, b) = bounds(values.iter().copied());
                (pos, tick(a), tick(b))
            }
            Axis::Categorical { values, .. } => {
                let mut levels: Vec<&String> = values.iter().collect();
                levels.sort();
                levels.dedup();
                let n = levels.len();
                let pos = values
                    .iter()
                    .map(|v| {
                        let i = levels.iter().position(|l| *l == v).unwrap_or(0);
                        scale(i as f64, (0.0, (n - 1) as f64), (0.0, 1.0))
                    })
                    .collect();
                let first = levels.first().map(|s| s.to_string()).unwrap_or_default();
                let last = levels.last().map(|s| s.to_string()).unwrap_or_default();
                (pos, first, last)
            }
        }
    }
}

/// One polyline per run across the axes, colored by the last axis.
pub fn parallel_coordinates(title: &str, axes_list: &[Axis]) -> String {
    let n_axes = axes_list.len();
    let width = 160.0 * n_axes.max(2) as f64 + 80.0;
    let (top, bottom) = (60.0, 360.0);
    let mut c = Canvas::new(width, 420.0);
    c.text(width / 2.0, 28.0, 15.0, "middle", title);
    let xs: Vec<f64> = (0..n_axes).map(|k| 80.0 + 160.0 * k as f64).collect();
    let columns: Vec<(Vec<f64>, String, String)> = axes_list.iter().map(Axis::positions).collect();
    let n_runs = columns.first().map_or(0, |c| c.0.len());
    for r in 0..n_runs {
        let pts: Vec<(f64, f64)> = columns
            .iter()
            .zip(&xs)
            .map(|((pos, _, _), &x)| (x, bottom - pos[r] * (bottom - top)))
            .collect();
        let color = columns.last().map_or(0.5, |(pos, _, _)| pos[r]);
        c.polyline(&pts, &ramp(color), 2.0, 0.8);
    }
    for (axis, ((_, lo, hi), &x)) in axes_list.iter().zip(columns.iter().zip(&xs)) {
        c.line((x, top), (x, bottom), "#333", 1.5);
        c.text(x, top - 12.0, 12.0, "middle", axis.name());
        c.text(x, bottom + 16.0, 11.0, "middle", lo);
        c.text(x, top - 0.0 + 12.0, 10.0, "start", hi);
    }
    c.finish()
}

/// Waveform above its spectrogram, sharing the time axis.
pub fn waveform_panel(title: &str, samples: &[f32], sample_rate: u32, spec: &[Vec<f64>]) -> String {
    let (w, h) = (800.0, 560.0);
    let (left, right) = (70.0, 760.0);
    let mut c = Canvas::new(w, h);
    c.text(w / 2.0, 24.0, 15.0, "middle", title);
    let duration = samples.len() as f64 / sample_rate as f64;

    let wave = Frame {
        left,
        top: 50.0,
        right,
        bottom: 230.0,
    };
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64)).max(1e-9);
    axes(&mut c, &wave, (0.0, duration), (-peak, peak), "", "amplitude");
    let cols = ((right - left) as usize).max(1);
    let per = samples.len().div_ceil(cols).max(1);
    let mut env = Vec::with_capacity(2 * cols);
    for (k, chunk) in samples.chunks(per).enumerate() {
        let x = left + (k as f64 + 0.5) * (right - left) / cols as f64;
        let (lo, hi) = bounds(chunk.iter().map(|&v| v as f64));
        env.push((x, scale(hi, (-peak, peak), (wave.bottom, wave.top))));
        env.push((x, scale(lo, (-peak, peak), (wave.bottom, wave.top))));
    }
    c.polyline(&env, PALETTE[0], 1.0, 1.0);

    let (top, bottom) = (290.0, 500.0);
    let rows = spec.len();
    let frames = spec.first().map_or(0, Vec::len);
    let (lo, hi) = bounds(spec.iter().flatten().copied());
    let (cw, ch) = ((right - left) / frames.max(1) as f64, (bottom - top) / rows.max(1) as f64);
    for (i, row) in spec.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let y = bottom - (i + 1) as f64 * ch;
            c.rect(left + j as f64 * cw, y, cw + 0.05, ch + 0.05, &ramp(scale(v, (lo, hi), (0.0, 1.0))));
        }
    }
    c.text((left + right) / 2.0, bottom + 34.0, 12.0, "middle", "time (s)");
    c.text(24.0, (top + bottom) / 2.0, 12.0, "middle", "mel bin");
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        c.text(left + t * (right - left), bottom + 16.0, 11.0, "middle", &tick(t * duration));
    }
    c.finish()
}
