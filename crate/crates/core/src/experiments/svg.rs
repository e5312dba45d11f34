//! Minimal self-contained SVG output: line plots and heatmaps with fixed styling.

use std::fmt::Write as _;

use crate::grid::FieldGrid;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(out, r#"<text x="{PAD}" y="{}" text-anchor="middle">{x0:.3}</text>"#, H - PAD + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x1:.3}</text>"#, W - PAD, H - PAD + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, PAD - 4.0, H - PAD);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, PAD - 4.0, PAD + 4.0);
}

/// Overlaid polylines, one per named series.
pub fn line_plot(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let xb = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let yb = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let sx = |x: f64| PAD + (x - xb.0) / (xb.1 - xb.0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - yb.0) / (yb.1 - yb.0) * (H - 2.0 * PAD);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, xb, yb);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = PAD + 16.0 + 16.0 * k as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, PAD + 8.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

/// Diverging blue-white-red map of a space-time field, time on the vertical axis.
pub fn heatmap(title: &str, field: &FieldGrid<f64>) -> String {
    let grid = field.grid();
    let tg = field.time_grid();
    let scale = field.max_abs().max(1e-300);
    let (nx, nt) = (grid.len(), tg.steps() + 1);
    let cw = (W - 2.0 * PAD) / nx as f64;
    let ch = (H - 2.0 * PAD) / nt as f64;
    let mut out = String::new();
    header(&mut out, title);
    for i in 0..nt {
        for j in 0..nx {
            let v = (field.at(i, j) / scale).clamp(-1.0, 1.0);
            let fade = (255.0 * (1.0 - v.abs())).round() as u8;
            let color = if v >= 0.0 { format!("#ff{fade:02x}{fade:02x}") } else { format!("#{fade:02x}{fade:02x}ff") };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                PAD + j as f64 * cw,
                H - PAD - (i + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    axes(&mut out, (grid.x(0), grid.x(nx - 1)), (0.0, tg.horizon()));
    out.push_str("</svg>\n");
    out
}
