//! Grouped bar charts as plain SVG.
//!
//! Rendering is a pure function of its input rows; identical CSVs give
//! identical bytes.

use crate::eval::{REPORT_HEADER, ZERO_SHOT_HEADER};
use crate::Error;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub dataset: String,
    pub variant: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotRow {
    pub task: String,
    pub variant: String,
    pub standard_acc: f64,
    pub negated_acc: f64,
    /// Signed, as stored.
    pub delta: f64,
}

fn rows<'a>(text: &'a str, header: &str, what: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, Error> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        _ => return Err(Error::Data(format!("{what}: expected header {header:?}"))),
    }
    Ok(lines.enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn number(field: &str, line: usize, what: &str) -> Result<f64, Error> {
    field.trim().parse().map_err(|_| Error::Data(format!("{what}:{line}: {field:?} is not a number")))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, Error> {
    rows(text, REPORT_HEADER, "report")?
        .map(|(line, f)| match f.as_slice() {
            [metric, dataset, variant, value] => Ok(ReportRow {
                metric: metric.to_string(),
                dataset: dataset.to_string(),
                variant: variant.to_string(),
                value: number(value, line, "report")?,
            }),
            _ => Err(Error::Data(format!("report:{line}: expected 4 fields"))),
        })
        .collect()
}

pub fn parse_zero_shot_csv(text: &str) -> Result<Vec<ZeroShotRow>, Error> {
    rows(text, ZERO_SHOT_HEADER, "zero-shot")?
        .map(|(line, f)| match f.as_slice() {
            [task, variant, s, n, d] => Ok(ZeroShotRow {
                task: task.to_string(),
                variant: variant.to_string(),
                standard_acc: number(s, line, "zero-shot")?,
                negated_acc: number(n, line, "zero-shot")?,
                delta: number(d, line, "zero-shot")?,
            }),
            _ => Err(Error::Data(format!("zero-shot:{line}: expected 5 fields"))),
        })
        .collect()
}

/// Distinct values in first-appearance order.
fn ordered<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

/// One cluster per group, one bar per series. `values[g][s]` may be `None`
/// for a missing bar. Heights are drawn on `[0, y_max]`.
pub fn grouped_bars(title: &str, groups: &[String], series: &[String], values: &[Vec<Option<f64>>], y_max: f64) -> String {
    let (width, height) = (120.0 + 90.0 * groups.len().max(1) as f64 * (series.len().max(1) as f64).sqrt(), 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 80.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - (v / y_max).clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(s, r##"<line x1="{left:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, width - right, y(v), y(v));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"#, left - 6.0, y(v) + 4.0);
    }
    for (g, name) in groups.iter().enumerate() {
        let x0 = left + g as f64 * group_w + group_w * 0.1;
        for (k, v) in values.get(g).into_iter().flatten().enumerate() {
            let Some(v) = v else { continue };
            let x = x0 + k as f64 * bar_w;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {}: {v:.2}</title></rect>"#,
                y(*v),
                bar_w * 0.95,
                y(0.0) - y(*v),
                PALETTE[k % PALETTE.len()],
                escape(name),
                escape(series.get(k).map_or("", String::as_str)),
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x0 + group_w * 0.4, y(0.0) + 16.0, escape(name));
    }
    let _ = writeln!(s, r#"<line x1="{left:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#, width - right, y(0.0), y(0.0));
    for (k, name) in series.iter().enumerate() {
        let x = left + k as f64 * 120.0;
        let ly = height - 24.0;
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#, ly - 9.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, x + 14.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Accuracy metrics grouped by variant.
pub fn accuracy_svg(rows: &[ReportRow]) -> String {
    let variants = ordered(rows.iter().map(|r| r.variant.as_str()));
    let metrics = ordered(rows.iter().map(|r| r.metric.as_str()));
    let values: Vec<Vec<Option<f64>>> = variants
        .iter()
        .map(|v| metrics.iter().map(|m| rows.iter().find(|r| &r.variant == v && &r.metric == m).map(|r| r.value)).collect())
        .collect();
    grouped_bars("Accuracy by variant (%)", &variants, &metrics, &values, 100.0)
}

/// Zero-shot Delta per task, one bar per variant. Negative Deltas are drawn
/// as zero; the signed values stay in the CSV.
pub fn delta_svg(rows: &[ZeroShotRow]) -> String {
    let tasks = ordered(rows.iter().map(|r| r.task.as_str()));
    let variants = ordered(rows.iter().map(|r| r.variant.as_str()));
    let values: Vec<Vec<Option<f64>>> = tasks
        .iter()
        .map(|t| {
            variants
                .iter()
                .map(|v| rows.iter().find(|r| &r.task == t && &r.variant == v).map(|r| plotted_delta(r.delta)))
                .collect()
        })
        .collect();
    let peak = values.iter().flatten().flatten().fold(0.0_f64, |a, &b| a.max(b));
    let y_max = if peak > 0.0 { (peak / 10.0).ceil() * 10.0 } else { 10.0 };
    grouped_bars("Zero-shot negation Delta (points)", &tasks, &variants, &values, y_max)
}

/// The plotted height of a Delta.
pub fn plotted_delta(delta: f64) -> f64 {
    delta.max(0.0)
}

pub const DELTA_HEADER: &str = "task,variant,delta";

/// Signed Deltas, as plotted before clamping.
pub fn delta_csv(rows: &[ZeroShotRow]) -> String {
    let mut out = format!("{DELTA_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.task, r.variant, r.delta);
    }
    out
}
