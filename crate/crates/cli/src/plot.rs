//! Deterministic SVG bar charts for the stats stage.
//!
//! Hand-rolled rather than pulled from a plotting crate: the charts are
//! simple bars, and emitting the markup directly keeps output byte-stable
//! across runs and platforms.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;

/// Writes a vertical bar chart of labeled counts.
pub fn bar_chart(title: &str, bars: &[(String, u64)], path: &Path) -> Result<()> {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="28" font-family="sans-serif" font-size="18" text-anchor="middle">{title}</text>"#,
        x = WIDTH / 2.0,
        title = escape(title),
    );

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let baseline = MARGIN_TOP + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="black"/>"#,
        x0 = MARGIN_LEFT,
        x1 = MARGIN_LEFT + plot_w,
        y = baseline,
    );

    let max = bars.iter().map(|(_, v)| *v).max().unwrap_or(0).max(1) as f64;
    let slot = if bars.is_empty() { plot_w } else { plot_w / bars.len() as f64 };
    let bar_w = (slot * 0.7).min(60.0);

    for (i, (label, value)) in bars.iter().enumerate() {
        let x = MARGIN_LEFT + slot * i as f64 + (slot - bar_w) / 2.0;
        let h = plot_h * (*value as f64 / max);
        let y = baseline - h;
        let cx = x + bar_w / 2.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="#4878a8"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{vy:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{value}</text>"#,
            vy = y - 4.0,
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{ly:.2}" font-family="sans-serif" font-size="11" text-anchor="end" transform="rotate(-45 {cx:.2} {ly:.2})">{label}</text>"#,
            ly = baseline + 14.0,
            label = escape(label),
        );
    }

    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
