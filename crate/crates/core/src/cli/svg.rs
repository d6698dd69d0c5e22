//! Minimal static line charts.

use std::fmt::Write;

pub struct Series<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
    pub dashed: bool,
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart of several series over a shared index axis. With `log_y`,
/// non-positive values are dropped.
pub fn line_chart(title: &str, series: &[Series<'_>], log_y: bool) -> String {
    let tf = |v: f64| if log_y { v.log10() } else { v };
    let finite = |v: f64| v.is_finite() && (!log_y || v > 0.0);
    let len = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &v in s.values.iter().filter(|v| finite(**v)) {
            lo = lo.min(tf(v));
            hi = hi.max(tf(v));
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let px = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (len - 1) as f64;
    let py = |v: f64| H - PAD - (H - 2.0 * PAD) * (tf(v) - lo) / (hi - lo);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{PAD}" y="20" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r#"<polyline points="{PAD},{PAD} {PAD},{y} {x},{y}" fill="none" stroke="black"/>"#,
        y = H - PAD,
        x = W - PAD
    );
    let label = |v: f64| if log_y { format!("1e{v:.1}") } else { format!("{v:.3}") };
    let _ = writeln!(out, r#"<text x="4" y="{}">{}</text>"#, H - PAD, label(lo));
    let _ = writeln!(out, r#"<text x="4" y="{}">{}</text>"#, PAD + 4.0, label(hi));
    let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - PAD - 20.0, H - PAD + 16.0, len - 1);
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| finite(**v))
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 14.0 * k as f64,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
