//! Static SVG figures: ROC curves and the sweep heat map.

use std::fmt::Write as _;

use crate::eval::RocPoint;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// ROC curves on the unit square with the chance diagonal.
pub fn roc_svg(title: &str, curves: &[(String, &[RocPoint])]) -> String {
    let (size, margin) = (360.0, 50.0);
    let x = |v: f64| margin + v * size;
    let y = |v: f64| margin + (1.0 - v) * size;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = size + 2.0 * margin + 150.0,
        h = size + 2.0 * margin
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="25" font-size="14">{}</text>"#, margin, escape(title)).unwrap();
    writeln!(
        svg,
        r#"<rect x="{margin}" y="{margin}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, x(v), y(0.0) + 16.0).unwrap();
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, x(0.0) - 6.0, y(v) + 4.0).unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">false positive rate</text>"#,
        x(0.5),
        y(0.0) + 36.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle">true positive rate</text>"#,
        x(0.0) - 34.0,
        y(0.5)
    )
    .unwrap();
    writeln!(
        svg,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    )
    .unwrap();
    for (i, (name, points)) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
        writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            path.join(" ")
        )
        .unwrap();
        let ly = margin + 14.0 + 18.0 * i as f64;
        let lx = margin + size + 15.0;
        writeln!(
            svg,
            r#"<line x1="{lx}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{ly:.1}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// One sweep cell: window size, level count and mean accuracy, `None` when
/// the cell was skipped.
pub type HeatCell = (usize, usize, Option<f64>);

/// Window size on the vertical axis, level count on the horizontal one.
pub fn heatmap_svg(title: &str, cells: &[HeatCell]) -> String {
    let mut sws: Vec<usize> = cells.iter().map(|c| c.0).collect();
    let mut ks: Vec<usize> = cells.iter().map(|c| c.1).collect();
    sws.sort_unstable();
    sws.dedup();
    ks.sort_unstable();
    ks.dedup();
    let (cell, left, top) = (70.0, 80.0, 50.0);
    let values: Vec<f64> = cells.iter().filter_map(|c| c.2).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut svg = String::new();
    let (w, h) = (left + cell * ks.len() as f64 + 20.0, top + cell * sws.len() as f64 + 50.0);
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="10" y="25" font-size="14">{}</text>"#, escape(title)).unwrap();
    for (row, sw) in sws.iter().enumerate() {
        let cy = top + cell * row as f64;
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">sw={sw}</text>"#, left - 8.0, cy + cell / 2.0 + 4.0)
            .unwrap();
        for (col, k) in ks.iter().enumerate() {
            let cx = left + cell * col as f64;
            let value = cells.iter().find(|c| c.0 == *sw && c.1 == *k).and_then(|c| c.2);
            let (fill, label) = match value {
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
                    let shade = (230.0 - 180.0 * t).round() as u8;
                    (format!("rgb({shade},{shade},255)"), format!("{v:.3}"))
                }
                None => ("#dddddd".to_string(), "skipped".to_string()),
            };
            writeln!(
                svg,
                r#"<rect x="{cx:.1}" y="{cy:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                cx + cell / 2.0,
                cy + cell / 2.0 + 4.0
            )
            .unwrap();
        }
    }
    for (col, k) in ks.iter().enumerate() {
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">k={k}</text>"#,
            left + cell * col as f64 + cell / 2.0,
            top + cell * sws.len() as f64 + 18.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_plot_has_one_polyline_per_curve() {
        let pts = [
            RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY },
            RocPoint { fpr: 1.0, tpr: 1.0, threshold: 0.1 },
        ];
        let svg = roc_svg("a < b", &[("x".into(), &pts), ("y".into(), &pts)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_marks_skipped_cells() {
        let svg = heatmap_svg("sweep", &[(4, 2, Some(0.9)), (4, 6, None), (64, 2, Some(0.95)), (64, 6, Some(0.97))]);
        assert_eq!(svg.matches("skipped").count(), 1);
        assert_eq!(svg.matches("<rect x=").count(), 4);
    }
}
