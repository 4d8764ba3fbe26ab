//! SVG heatmaps of CKA grids and line plots of layer curves.

use std::fmt::Write as _;

use replab::{CkaMatrix, LayerTag};

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStyle {
    /// Values at or below `vmin` get the first colour, at or above `vmax` the last.
    pub vmin: f64,
    pub vmax: f64,
    pub cell_size: f64,
    pub block_group_lines: bool,
    /// Fill for undefined (NaN) cells.
    pub undefined_fill: String,
    pub title: Option<String>,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        HeatmapStyle {
            vmin: 0.0,
            vmax: 1.0,
            cell_size: 18.0,
            block_group_lines: true,
            undefined_fill: "#d9d9d9".into(),
            title: None,
        }
    }
}

// magma-like ramp, dark (low) to light (high)
const RAMP: [(u8, u8, u8); 6] = [
    (0, 0, 4),
    (59, 15, 112),
    (140, 41, 129),
    (222, 73, 104),
    (254, 159, 109),
    (252, 253, 191),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let lerp = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Positions `k` (between tag `k - 1` and tag `k`) where the block group changes.
fn group_boundaries(tags: &[LayerTag]) -> Vec<usize> {
    (1..tags.len())
        .filter(|&k| tags[k].block_group != tags[k - 1].block_group)
        .collect()
}

/// One `<rect class="cell">` per matrix entry, rows top to bottom, with the
/// row and column tags as axis labels.
pub fn heatmap(grid: &CkaMatrix, style: &HeatmapStyle) -> String {
    let (rows, cols) = grid.dim();
    let cs = style.cell_size;
    let left = 150.0;
    let top = if style.title.is_some() { 40.0 } else { 16.0 };
    let bottom = 110.0;
    let legend = 70.0;
    let width = left + cols as f64 * cs + legend;
    let height = top + rows as f64 * cs + bottom;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    if let Some(title) = &style.title {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-size="13" text-anchor="middle">{}</text>"#,
            left + cols as f64 * cs / 2.0,
            escape(title)
        );
    }
    let span = style.vmax - style.vmin;
    for (i, row) in grid.values().rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (left + j as f64 * cs, top + i as f64 * cs);
            let fill = if v.is_nan() {
                style.undefined_fill.clone()
            } else {
                color(if span > 0.0 { (v - style.vmin) / span } else { 0.0 })
            };
            let label = if v.is_nan() { "undefined".to_string() } else { format!("{v:.4}") };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{cs}" height="{cs}" fill="{fill}"><title>{} / {}: {label}</title></rect>"#,
                escape(&grid.row_tags()[i].to_string()),
                escape(&grid.col_tags()[j].to_string()),
            );
            if v.is_nan() {
                let _ = writeln!(
                    s,
                    r##"<path d="M{x} {y}l{cs} {cs}M{} {y}l-{cs} {cs}" stroke="#808080" stroke-width="1"/>"##,
                    x + cs
                );
            }
        }
    }
    for (i, tag) in grid.row_tags().iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            left - 4.0,
            top + (i as f64 + 0.5) * cs,
            escape(&tag.short_label())
        );
    }
    let label_y = top + rows as f64 * cs + 6.0;
    for (j, tag) in grid.col_tags().iter().enumerate() {
        let x = left + (j as f64 + 0.5) * cs;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{label_y}" text-anchor="end" dominant-baseline="middle" transform="rotate(-90 {x} {label_y})">{}</text>"#,
            escape(&tag.short_label())
        );
    }
    if style.block_group_lines {
        let (x0, x1) = (left, left + cols as f64 * cs);
        let (y0, y1) = (top, top + rows as f64 * cs);
        for k in group_boundaries(grid.row_tags()) {
            let y = top + k as f64 * cs;
            let _ = writeln!(
                s,
                r##"<line class="bg" x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ffffff" stroke-width="1.5"/>"##
            );
        }
        for k in group_boundaries(grid.col_tags()) {
            let x = left + k as f64 * cs;
            let _ = writeln!(
                s,
                r##"<line class="bg" x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#ffffff" stroke-width="1.5"/>"##
            );
        }
    }
    // colour bar
    let bar_x = left + cols as f64 * cs + 20.0;
    let bar_h = (rows as f64 * cs).max(60.0);
    let steps = 32;
    for k in 0..steps {
        let t = 1.0 - (k as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x}" y="{}" width="12" height="{}" fill="{}"/>"#,
            top + k as f64 * bar_h / steps as f64,
            bar_h / steps as f64 + 0.5,
            color(t)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bar_x + 16.0, top + 8.0, style.vmax);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bar_x + 16.0, top + bar_h, style.vmin);
    s.push_str("</svg>\n");
    s
}

/// Line plot of one or more named curves over a shared x axis of layer labels.
pub fn line_plot(title: &str, x_labels: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let (left, top, pw, ph) = (50.0, 36.0, (x_labels.len().max(2) as f64) * 36.0, 220.0);
    let width = left + pw + 160.0;
    let height = top + ph + 70.0;
    let xs = |k: usize| left + (k as f64 + 0.5) * pw / x_labels.len().max(1) as f64;
    let ys = |v: f64| top + (1.0 - v.clamp(0.0, 1.0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>"##
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = ys(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#e0e0e0"/><text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{tick}</text>"##,
            left + pw,
            left - 4.0
        );
    }
    for (k, label) in x_labels.iter().enumerate() {
        let (x, y) = (xs(k), top + ph + 6.0);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="end" dominant-baseline="middle" transform="rotate(-90 {x} {y})">{}</text>"#,
            escape(label)
        );
    }
    for (n, (name, values)) in series.iter().enumerate() {
        let c = COLORS[n % COLORS.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.filter(|v| v.is_finite()).map(|v| format!("{},{}", xs(k), ys(v))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 10.0 + 14.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{ly}" dominant-baseline="middle">{}</text>"#,
            left + pw + 10.0,
            left + pw + 26.0,
            left + pw + 30.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
