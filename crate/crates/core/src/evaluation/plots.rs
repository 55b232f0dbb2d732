use std::fmt::Write as _;

const W: f64 = 360.0;
const H: f64 = 280.0;
const PAD: f64 = 40.0;

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle">{title}</text>"#, W / 2.0);
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 1.5);
    let _ = writeln!(
        s,
        r#"<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (x0 + x1) / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for t in [0.0, 0.5, 1.0] {
        let x = x0 + t * (x1 - x0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{t:.1}</text>"#, y0 + 14.0);
    }
    s
}

fn to_px(x: f64, y: f64) -> (f64, f64) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 1.5);
    (x0 + x.clamp(0.0, 1.0) * (x1 - x0), y0 - y.clamp(0.0, 1.0) * (y0 - y1))
}

/// Static precision–recall plot from `(recall, precision)` points.
pub fn pr_curve_svg(title: &str, curve: &[(f64, f64)]) -> String {
    let mut s = frame(title, "recall", "precision");
    let pts: Vec<String> = std::iter::once((0.0, curve.first().map_or(0.0, |c| c.1)))
        .chain(curve.iter().copied())
        .map(|(r, p)| {
            let (x, y) = to_px(r, p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

/// Overlaid histograms of scores in `[0, 1]` for positive and negative
/// pairs, each normalized to its own peak.
pub fn score_histogram_svg(title: &str, positives: &[f64], negatives: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let mut s = frame(title, "score", "relative frequency");
    for (vals, color) in [(negatives, "indianred"), (positives, "seagreen")] {
        let mut counts = vec![0usize; bins];
        for v in vals {
            let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        for (b, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (x, y) = to_px(b as f64 / bins as f64, c as f64 / peak);
            let (x2, base) = to_px((b + 1) as f64 / bins as f64, 0.0);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                x2 - x,
                base - y
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
