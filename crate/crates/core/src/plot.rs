//! Minimal self-contained SVG heatmaps.

use std::fmt::Write as _;

pub type Rgb = (u8, u8, u8);

/// Diverging palette anchors for correlation values.
pub const NEGATIVE_COLOR: Rgb = (0x21, 0x66, 0xac);
pub const NEUTRAL_COLOR: Rgb = (0xf7, 0xf7, 0xf7);
pub const POSITIVE_COLOR: Rgb = (0xb2, 0x18, 0x2b);
/// Hex of the color drawn for a correlation of exactly +1.
pub const MAX_COLOR_HEX: &str = "#b2182b";

/// Sequential palette anchors (confusion matrices): 0 maps to white, 1 to deep blue.
pub const SEQ_LOW_COLOR: Rgb = (0xff, 0xff, 0xff);
pub const SEQ_HIGH_COLOR: Rgb = (0x08, 0x30, 0x6b);

pub fn hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c.0, c.1, c.2)
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    let mix = |x: u8, y: u8| (f64::from(x) + (f64::from(y) - f64::from(x)) * t).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Maps [-1, 1] onto blue-white-red.
pub fn diverging(v: f64) -> Rgb {
    let v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
    if v < 0.0 {
        lerp(NEUTRAL_COLOR, NEGATIVE_COLOR, -v)
    } else {
        lerp(NEUTRAL_COLOR, POSITIVE_COLOR, v)
    }
}

/// Maps [0, 1] onto white-blue.
pub fn sequential(v: f64) -> Rgb {
    lerp(SEQ_LOW_COLOR, SEQ_HIGH_COLOR, if v.is_finite() { v } else { 0.0 })
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A square grid with row and column labels.
pub struct Grid<'a> {
    pub title: &'a str,
    pub row_labels: &'a [String],
    pub col_labels: &'a [String],
    pub row_axis: &'a str,
    pub col_axis: &'a str,
    /// Cell fill color and cell text, by (row, col).
    pub cell: &'a dyn Fn(usize, usize) -> (Rgb, String),
}

const CELL: usize = 56;

pub fn render(grid: &Grid<'_>) -> String {
    let n_rows = grid.row_labels.len();
    let n_cols = grid.col_labels.len();
    let longest = grid
        .row_labels
        .iter()
        .chain(grid.col_labels.iter())
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(0);
    let margin = 40 + longest * 7;
    let top = 40 + margin;
    let width = margin + n_cols * CELL + 20;
    let height = top + n_rows * CELL + 40;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2,
        escape(grid.title)
    );
    for (j, label) in grid.col_labels.iter().enumerate() {
        let x = margin + j * CELL + CELL / 2;
        let y = top - 6;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" font-size="11" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(label)
        );
    }
    for (i, label) in grid.row_labels.iter().enumerate() {
        let y = top + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-size="11" text-anchor="end">{}</text>"#,
            margin - 6,
            escape(label)
        );
    }
    for i in 0..n_rows {
        for j in 0..n_cols {
            let (color, text) = (grid.cell)(i, j);
            let x = margin + j * CELL;
            let y = top + i * CELL;
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#ffffff"/>"##,
                hex(color)
            );
            let luminance =
                0.299 * f64::from(color.0) + 0.587 * f64::from(color.1) + 0.114 * f64::from(color.2);
            let ink = if luminance < 128.0 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" fill="{ink}">{}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4,
                escape(&text)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        margin + n_cols * CELL / 2,
        height - 12,
        escape(grid.col_axis)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        top + n_rows * CELL / 2,
        top + n_rows * CELL / 2,
        escape(grid.row_axis)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_anchors() {
        assert_eq!(hex(diverging(1.0)), MAX_COLOR_HEX);
        assert_eq!(diverging(0.0), NEUTRAL_COLOR);
        assert_eq!(diverging(-1.0), NEGATIVE_COLOR);
        assert_eq!(sequential(0.0), SEQ_LOW_COLOR);
        assert_eq!(sequential(1.0), SEQ_HIGH_COLOR);
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b&c"), "a&lt;b&amp;c");
    }
}
