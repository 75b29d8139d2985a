//! Minimal SVG scatter plot of predicted against reference EF.

use std::fmt::Write;

use hssnet::error::Result;
use hssnet::metrics::ef_stats;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Points are `(reference, predicted)` EF in percent.
pub fn scatter_svg(points: &[(f64, f64)]) -> Result<String> {
    let (truth, pred): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let stats = ef_stats(&pred, &truth)?;
    let lo = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::INFINITY, f64::min).min(0.0).floor();
    let hi = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::NEG_INFINITY, f64::max).max(100.0).ceil();
    let span = SIZE - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + (v - lo) / (hi - lo) * span;
    let y = |v: f64| SIZE - MARGIN - (v - lo) / (hi - lo) * span;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        w,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(lo),
        y(lo),
        x(hi),
        y(hi)
    );
    let mut tick = (lo / 20.0).ceil() * 20.0;
    while tick <= hi {
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{tick}</text>"#, x(tick), SIZE - MARGIN + 16.0);
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#, MARGIN - 6.0, y(tick) + 4.0);
        tick += 20.0;
    }
    for &(t, p) in points {
        let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="steelblue" fill-opacity="0.8"/>"#, x(t), y(p));
    }
    let corr = stats.corr.map_or("n/a".to_string(), |c| format!("{c:.3}"));
    let _ = writeln!(
        w,
        r#"<text x="{MARGIN}" y="{:.1}">n = {}, r = {corr}, bias = {:.2} ± {:.2}</text>"#,
        MARGIN - 14.0,
        stats.n,
        stats.bias,
        stats.std
    );
    let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">reference EF (%)</text>"#, SIZE / 2.0, SIZE - 12.0);
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">predicted EF (%)</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_marker_per_point() {
        let svg = scatter_svg(&[(50.0, 52.0), (60.0, 58.0), (35.0, 40.0)]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("n = 3"));
    }
}
