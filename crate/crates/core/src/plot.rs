//! Minimal SVG line charts for reports and training logs.

use std::fmt::Write as _;

use crate::eval::{overlap_thresholds, precision_curve, EvalReport};
use crate::pipeline::{smoothed, LogEntry};

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `series` on shared axes. Empty or non-finite data yields an empty
/// plot area rather than an error.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} L{PAD} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 10.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{c}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {c})">{}</text>"#,
        esc(ylabel),
        c = H / 2.0
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), H - PAD + 14.0, "middle"),
        (x1, sx(x1), H - PAD + 14.0, "middle"),
        (y0, PAD - 4.0, sy(y0), "end"),
        (y1, PAD - 4.0, sy(y1) + 4.0, "end"),
    ] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#);
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !d.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.join(" "));
        }
        let ly = PAD + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            esc(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn pooled(report: &EvalReport, f: impl Fn(&crate::eval::SequenceTrace) -> &Vec<f64>) -> Vec<f64> {
    report.per_sequence.values().flat_map(|t| f(t).iter().copied()).collect()
}

pub fn success_plot(report: &EvalReport) -> String {
    let ious = pooled(report, |t| &t.iou);
    let curve = crate::eval::success_curve(&ious);
    let points = overlap_thresholds().into_iter().zip(curve).collect();
    let label = format!("AUC {:.3}", report.aggregate.auc);
    line_chart("Success", "overlap threshold", "success rate", &[Series { label, points }])
}

pub fn precision_plot(report: &EvalReport) -> String {
    let errs = pooled(report, |t| &t.err);
    let points = precision_curve(&errs, 50).into_iter().enumerate().map(|(i, v)| (i as f64, v)).collect();
    let label = format!("P@20 {:.3}", report.aggregate.p);
    line_chart("Precision", "location error (px)", "precision", &[Series { label, points }])
}

/// Raw and smoothed `loss_all` per step.
pub fn loss_plot(log: &[LogEntry]) -> String {
    let raw: Vec<f64> = log.iter().map(|e| e.loss_all).collect();
    let xs: Vec<f64> = log.iter().map(|e| e.step as f64).collect();
    let ema = smoothed(&raw, 0.05);
    let series = [
        Series { label: "loss_all".into(), points: xs.iter().copied().zip(raw).collect() },
        Series { label: "smoothed".into(), points: xs.into_iter().zip(ema).collect() },
    ];
    line_chart("Training loss", "step", "loss", &series)
}
