//! Segmentation band charts as plain SVG.

use std::fmt::Write;

use super::metrics::run_length_encode;

pub const PALETTE: [&str; 22] = [
    "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231", "#911eb4", "#46f0f0", "#f032e6", "#bcf60c", "#fabebe",
    "#008080", "#e6beff", "#9a6324", "#fffac8", "#800000", "#aaffc3", "#808000", "#ffd8b1", "#000075", "#808080",
    "#000000", "#ffffff",
];

pub fn label_color(label: usize) -> &'static str {
    PALETTE[label % PALETTE.len()]
}

const WIDTH: f64 = 800.0;
const ROW_HEIGHT: f64 = 30.0;
const LABEL_WIDTH: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacked horizontal bands, one per `(row name, labels)` pair, with one
/// rectangle per segment.
pub fn band_svg(title: &str, rows: &[(&str, &[usize])]) -> String {
    let height = ROW_HEIGHT * rows.len() as f64 + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}">"#,
        w = WIDTH + LABEL_WIDTH
    );
    let _ = writeln!(svg, r#"<text x="4" y="16" font-family="sans-serif" font-size="12">{}</text>"#, escape(title));
    for (r, (name, labels)) in rows.iter().enumerate() {
        let y = 24.0 + r as f64 * ROW_HEIGHT;
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            y + ROW_HEIGHT * 0.6,
            escape(name)
        );
        let n = labels.len().max(1) as f64;
        for seg in run_length_encode(labels) {
            let x = LABEL_WIDTH + WIDTH * seg.start as f64 / n;
            let w = WIDTH * (seg.end - seg.start) as f64 / n;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.3}" y="{y:.1}" width="{w:.3}" height="{:.1}" fill="{}"><title>{} [{}, {})</title></rect>"#,
                ROW_HEIGHT - 4.0,
                label_color(seg.label),
                seg.label,
                seg.start,
                seg.end
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
