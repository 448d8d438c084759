//! Minimal deterministic SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
}

fn finite_range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(out: &mut String, xr: (f64, f64), yr: (f64, f64), xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{PAD}\" y=\"{lb}\">{:.3}</text>\n\
         <text x=\"{r}\" y=\"{lb}\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{lx}\" y=\"{b}\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{lx}\" y=\"{PAD}\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{cx}\" y=\"{xl}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"12\" y=\"{cy}\" text-anchor=\"middle\" transform=\"rotate(-90 12 {cy})\">{}</text>\n",
        xr.0,
        xr.1,
        yr.0,
        yr.1,
        escape(xlabel),
        escape(ylabel),
        b = H - PAD,
        r = W - PAD,
        lb = H - PAD + 14.0,
        lx = PAD - 4.0,
        cx = W / 2.0,
        xl = H - 8.0,
        cy = H / 2.0,
    );
}

/// Line chart of one or more series sharing axes.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xr = finite_range(series.iter().flat_map(|s| s.x.iter().copied()));
    let yr = finite_range(series.iter().flat_map(|s| s.y.iter().copied()));
    let px = |x: f64| PAD + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, xr, yr, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - PAD - 120.0,
            PAD + 14.0 * i as f64,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars, one per label.
pub fn bar_chart(title: &str, ylabel: &str, labels: &[String], values: &[f64]) -> String {
    let (lo, hi) = finite_range(values.iter().copied().chain([0.0]));
    let py = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, (0.0, labels.len() as f64), (lo, hi), "", ylabel);
    let slot = (W - 2.0 * PAD) / labels.len().max(1) as f64;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let v = if v.is_finite() { v } else { 0.0 };
        let (top, bottom) = (py(v.max(0.0)), py(v.min(0.0)));
        let x = PAD + slot * i as f64 + slot * 0.1;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            slot * 0.8,
            (bottom - top).max(0.0),
            COLORS[0]
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"9\" transform=\"rotate(-60 {:.2} {:.2})\">{}</text>",
            x + slot * 0.4,
            H - PAD + 10.0,
            x + slot * 0.4,
            H - PAD + 10.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Diverging heatmap of values in [-1, 1]; NaN cells are grey.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let cw = (W - 2.0 * PAD) / cols.len().max(1) as f64;
    let ch = (H - 2.0 * PAD) / rows.len().max(1) as f64;
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let fill = if v.is_finite() {
                let t = v.clamp(-1.0, 1.0);
                let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                if t >= 0.0 {
                    format!("rgb(255,{fade},{fade})")
                } else {
                    format!("rgb({fade},{fade},255)")
                }
            } else {
                "#cccccc".to_string()
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{fill}\"/>",
                PAD + cw * j as f64,
                PAD + ch * i as f64
            );
        }
    }
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"8\">{}</text>",
            PAD - 2.0,
            PAD + ch * (i as f64 + 0.7),
            escape(r)
        );
    }
    for (j, c) in cols.iter().enumerate() {
        let x = PAD + cw * (j as f64 + 0.5);
        let y = H - PAD + 8.0;
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"end\" font-size=\"8\" transform=\"rotate(-60 {x:.2} {y:.2})\">{}</text>",
            escape(c)
        );
    }
    out.push_str("</svg>\n");
    out
}
