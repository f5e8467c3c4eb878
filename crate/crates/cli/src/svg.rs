//! Side-by-side inlier/outlier histogram panels as a standalone SVG.

use std::fmt::Write as _;

use gradnovel::eval::Histogram;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 36.0;
const INLIER: &str = "#1f77b4";
const OUTLIER: &str = "#ff7f0e";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Overlap label exactly as printed in each panel.
pub fn overlap_label(h: &Histogram) -> String {
    format!("overlap {}%", h.overlap_percent)
}

pub fn render(panels: &[(&str, &Histogram)], caption: &str) -> String {
    let width = PANEL_W * panels.len() as f64;
    let height = PANEL_H + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="8" y="{}" font-size="12">{}</text>"#, height - 8.0, escape(caption));
    for (p, (title, h)) in panels.iter().enumerate() {
        let x0 = p as f64 * PANEL_W + MARGIN;
        let plot_w = PANEL_W - 1.5 * MARGIN;
        let plot_h = PANEL_H - 2.0 * MARGIN;
        let base = MARGIN + plot_h;
        let peak = h.inlier_counts.iter().chain(&h.outlier_counts).copied().max().unwrap_or(1).max(1) as f64;
        let bw = plot_w / h.bin_count() as f64;
        let _ = writeln!(s, r#"<g class="panel">"#);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-size="13">{}</text>"#, MARGIN - 18.0, escape(title));
        let _ = writeln!(
            s,
            r#"<text class="overlap" x="{x0}" y="{}">{}</text>"#,
            MARGIN - 4.0,
            escape(&overlap_label(h))
        );
        for (counts, color) in [(&h.inlier_counts, INLIER), (&h.outlier_counts, OUTLIER)] {
            for (b, &c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
                let bh = plot_h * c as f64 / peak;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.55"/>"#,
                    x0 + b as f64 * bw,
                    base - bh,
                    bw,
                    bh
                );
            }
        }
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{base}" x2="{:.2}" y2="{base}" stroke="#333"/>"##,
            x0 + plot_w
        );
        let _ = writeln!(s, r#"<text x="{x0}" y="{}">{:.4}</text>"#, base + 14.0, h.lo);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="end">{:.4}</text>"#,
            x0 + plot_w,
            base + 14.0,
            h.hi
        );
        s.push_str("</g>\n");
    }
    let lx = width - 150.0;
    let _ = writeln!(s, r#"<rect x="{lx}" y="4" width="10" height="10" fill="{INLIER}" fill-opacity="0.55"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="13">inliers</text>"#, lx + 14.0);
    let _ = writeln!(s, r#"<rect x="{}" y="4" width="10" height="10" fill="{OUTLIER}" fill-opacity="0.55"/>"#, lx + 64.0);
    let _ = writeln!(s, r#"<text x="{}" y="13">outliers</text>"#, lx + 78.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradnovel::eval::histogram;

    #[test]
    fn svg_is_well_formed_and_prints_exact_overlaps() {
        let a = histogram(&[1.0, 1.0, 2.0], &[2.0, 3.0, 3.0], 3).unwrap();
        let b = histogram(&[0.0, 0.5], &[10.0, 11.0], 10).unwrap();
        let svg = render(&[("recon <BCE>", &a), ("gradient", &b)], "class 5 & others");
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let overlaps: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("overlap"))
            .filter_map(|n| n.text())
            .collect();
        assert_eq!(overlaps, vec![overlap_label(&a).as_str(), "overlap 0%"]);
        assert_eq!(overlaps[0], format!("overlap {}%", 100.0 * 2.0 / 6.0));
    }
}
