//! Minimal static SVG figures.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(w: f64, h: f64, title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", w / 2.0, esc(title));
    s
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(s: &mut String, xlab: &str, ylab: &str, (y0, y1): (f64, f64)) {
    let _ = writeln!(s, "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - M, W - M / 2.0, H - M);
    let _ = writeln!(s, "<line x1=\"{M}\" y1=\"{}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>", M / 2.0 + 10.0, H - M);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 12.0, esc(xlab));
    let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>", H / 2.0, H / 2.0, esc(ylab));
    for t in 0..=4 {
        let v = y0 + (y1 - y0) * t as f64 / 4.0;
        let y = H - M - (H - 1.5 * M - 10.0) * t as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", M - 4.0, y + 4.0, v);
    }
}

/// Line plot of one trace.
pub fn trace(values: &[f64], title: &str, ylab: &str) -> String {
    let mut s = open(W, H, title);
    let yr = range(values.iter().copied());
    axes(&mut s, "iteration", ylab, yr);
    let n = values.len().max(2) as f64 - 1.0;
    let mut pts = String::new();
    for (t, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let x = M + (W - 1.5 * M) * t as f64 / n;
        let y = H - M - (H - 1.5 * M - 10.0) * (v - yr.0) / (yr.1 - yr.0);
        let _ = write!(pts, "{x:.1},{y:.1} ");
    }
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"/>", PALETTE[2], pts.trim_end());
    s.push_str("</svg>\n");
    s
}

/// Observed versus predicted scatter with vertical band segments and the identity line.
pub fn band_scatter(points: &[(f64, f64, f64, f64)], title: &str, log: bool) -> String {
    // (observed, lo, median, hi)
    let f = |v: f64| if log { v.ln_1p() } else { v };
    let mut s = open(W, H, title);
    let r = range(points.iter().flat_map(|p| [f(p.0), f(p.1), f(p.3)]));
    let lab = if log { "log(1 + total)" } else { "total" };
    axes(&mut s, &format!("observed {lab}"), &format!("replicated {lab}"), r);
    let px = |v: f64| M + (W - 1.5 * M) * (v - r.0) / (r.1 - r.0);
    let py = |v: f64| H - M - (H - 1.5 * M - 10.0) * (v - r.0) / (r.1 - r.0);
    let _ = writeln!(s, "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"grey\" stroke-dasharray=\"4 3\"/>", px(r.0), py(r.0), px(r.1), py(r.1));
    for &(o, lo, med, hi) in points {
        let covered = lo <= o && o <= hi;
        let c = if covered { PALETTE[0] } else { PALETTE[1] };
        let x = px(f(o));
        let _ = writeln!(s, "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"{c}\" stroke-opacity=\"0.5\"/>", py(f(lo)), py(f(hi)));
        let _ = writeln!(s, "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"1.5\" fill=\"{c}\"/>", py(f(med)));
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per label, one bar per series; `None` leaves a gap.
pub fn grouped_bars(groups: &[(String, Vec<Option<f64>>)], series: &[String], title: &str, ylab: &str, floor: f64) -> String {
    let mut s = open(W, H, title);
    let top = groups.iter().flat_map(|g| g.1.iter().flatten().copied()).fold(floor + 1e-9, f64::max);
    let yr = (floor, top.max(floor + 1e-9));
    axes(&mut s, "", ylab, yr);
    let gw = (W - 1.5 * M) / groups.len().max(1) as f64;
    let bw = gw * 0.8 / series.len().max(1) as f64;
    for (g, (label, vals)) in groups.iter().enumerate() {
        let gx = M + g as f64 * gw + gw * 0.1;
        for (k, v) in vals.iter().enumerate() {
            let Some(v) = v else { continue };
            let h = (H - 1.5 * M - 10.0) * ((v - yr.0) / (yr.1 - yr.0)).clamp(0.0, 1.0);
            let _ = writeln!(s, "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>", gx + k as f64 * bw, H - M - h, bw * 0.95, h, PALETTE[k % PALETTE.len()]);
        }
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", gx + gw * 0.4, H - M + 14.0, esc(label));
    }
    for (k, name) in series.iter().enumerate() {
        let y = 36.0 + 14.0 * k as f64;
        let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>", W - 150.0, y - 9.0, PALETTE[k % PALETTE.len()], W - 136.0, y, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Heat map of a matrix. `diverging` centers a blue–red scale at zero,
/// otherwise white to dark green from zero to the maximum.
pub fn heatmap(m: &[Vec<f64>], row_labels: &[String], col_labels: &[String], title: &str, diverging: bool) -> String {
    let rows = m.len().max(1);
    let cols = m.first().map_or(1, |r| r.len().max(1));
    let cell_h = (600.0 / rows as f64).clamp(0.2, 18.0);
    let cell_w = (480.0 / cols as f64).clamp(8.0, 60.0);
    let left = if rows <= 60 { 120.0 } else { 20.0 };
    let (w, h) = (left + cell_w * cols as f64 + 20.0, 50.0 + cell_h * rows as f64 + 20.0);
    let mut s = open(w.max(240.0), h, title);
    let amax = m.iter().flatten().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = (v / amax).clamp(-1.0, 1.0);
            let (r, g, b) = if diverging {
                if t >= 0.0 {
                    (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
                } else {
                    (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
                }
            } else {
                (255.0 * (1.0 - t), 255.0 - 155.0 * t, 255.0 * (1.0 - t))
            };
            let _ = writeln!(s, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({},{},{})\"/>", left + j as f64 * cell_w, 40.0 + i as f64 * cell_h, cell_w, cell_h, r as u8, g as u8, b as u8);
        }
        if rows <= 60 {
            if let Some(l) = row_labels.get(i) {
                let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", left - 4.0, 40.0 + (i as f64 + 0.75) * cell_h, esc(l));
            }
        }
    }
    for (j, l) in col_labels.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"36\" text-anchor=\"middle\">{}</text>", left + (j as f64 + 0.5) * cell_w, esc(l));
    }
    s.push_str("</svg>\n");
    s
}

/// Plain text table.
pub fn table(header: &[String], rows: &[Vec<String>], title: &str) -> String {
    let col_w = 110.0;
    let (w, h) = (20.0 + col_w * header.len().max(1) as f64, 60.0 + 16.0 * rows.len() as f64);
    let mut s = open(w.max(240.0), h, title);
    for (c, name) in header.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"44\" font-weight=\"bold\">{}</text>", 10.0 + c as f64 * col_w, esc(name));
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", 10.0 + c as f64 * col_w, 60.0 + 16.0 * r as f64, esc(cell));
        }
    }
    s.push_str("</svg>\n");
    s
}
