//! Evaluation reports: JSON, CSV tables and SVG histograms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use icepilot_core::eval::{EvalReport, Histogram};

use crate::formats::write_json;
use crate::Error;

/// Bar chart of a histogram; the last bar is the overflow bin.
pub fn histogram_svg(title: &str, x_label: &str, h: &Histogram) -> String {
    let (w, ht, left, bottom, top) = (640.0, 320.0, 50.0, 40.0, 30.0);
    let bins: Vec<usize> = h.counts.iter().copied().chain([h.overflow]).collect();
    let max = bins.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = w - left - 10.0;
    let plot_h = ht - bottom - top;
    let bar_w = plot_w / bins.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{ht}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (i, c) in bins.iter().enumerate() {
        let bh = *c as f64 / max * plot_h;
        let x = left + i as f64 * bar_w;
        let y = top + plot_h - bh;
        let fill = if i == h.counts.len() {
            "#c0504d"
        } else {
            "#4f81bd"
        };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="{fill}"><title>{c}</title></rect>"#,
            bar_w - 1.0
        );
    }
    let axis_y = top + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        w - 10.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{axis_y}" stroke="black"/>"#
    );
    for i in (0..=h.counts.len()).step_by(4) {
        let x = left + i as f64 * bar_w;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            axis_y + 14.0,
            fmt_edge(i as f64 * h.bin_width)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">&gt;</text>"#,
        left + (h.counts.len() as f64 + 0.5) * bar_w,
        axis_y + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        ht - 6.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + 4.0,
        max as usize
    );
    s.push_str("</svg>\n");
    s
}

fn fmt_edge(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    format!("{r}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One row per case.
pub fn cases_csv(report: &EvalReport) -> String {
    let mut s = String::from("scene_seed,view,in_volume,in_sector,real_distance_mm,normalized_distance,q02_in,q50_in,q98_in,correct\n");
    for c in &report.cases {
        let [a, b, d] = c.quantile_in_volume;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.4},{:.4},{a},{b},{d},{}",
            c.scene_seed,
            c.view.name(),
            c.metrics.in_volume,
            c.metrics.in_sector,
            c.metrics.real_distance,
            c.metrics.normalized_distance,
            c.correct()
        );
    }
    s
}

/// Overall and per-view accuracy.
pub fn summary_csv(report: &EvalReport) -> String {
    let mut s = String::from("view,count,correct,accuracy\n");
    let _ = writeln!(
        s,
        "ALL,{},{},{:.4}",
        report.total, report.correct, report.accuracy
    );
    for (v, r) in &report.per_view {
        let _ = writeln!(
            s,
            "{},{},{},{:.4}",
            v.name(),
            r.count,
            r.correct,
            r.accuracy
        );
    }
    if let Some(cov) = report.coverage {
        s.push_str("\naxis,coverage\n");
        for (name, c) in ["x", "y", "z", "rx", "ry", "rz"].iter().zip(cov) {
            let _ = writeln!(s, "{name},{c:.4}");
        }
    }
    s
}

/// Long-form histogram table: one row per bin, overflow last with an open end.
pub fn histograms_csv(report: &EvalReport) -> String {
    let mut s = String::from("histogram,view,bin_start,bin_end,count\n");
    let mut rows = |name: &str, view: &str, h: &Histogram| {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name},{view},{},{},{c}",
                fmt_edge(i as f64 * h.bin_width),
                fmt_edge((i + 1) as f64 * h.bin_width)
            );
        }
        let _ = writeln!(
            s,
            "{name},{view},{},inf,{}",
            fmt_edge(h.counts.len() as f64 * h.bin_width),
            h.overflow
        );
    };
    rows("normalized", "ALL", &report.normalized);
    rows("real_mm", "ALL", &report.real);
    for (v, r) in &report.per_view {
        rows("normalized", v.name(), &r.normalized);
    }
    s
}

fn write_all(files: Vec<(PathBuf, String)>) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::with_capacity(files.len());
    for (path, text) in files {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the JSON report to `path` and its CSV tables next to it
/// (`<stem>.cases.csv`, `<stem>.summary.csv`, `<stem>.histograms.csv`).
pub fn write_report(path: &Path, report: &EvalReport) -> Result<Vec<PathBuf>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_json(path, report)?;
    let stem = path
        .file_stem()
        .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    let sibling = |suffix: &str| path.with_file_name(format!("{stem}.{suffix}.csv"));
    let mut written = vec![path.to_path_buf()];
    written.extend(write_all(vec![
        (sibling("cases"), cases_csv(report)),
        (sibling("summary"), summary_csv(report)),
        (sibling("histograms"), histograms_csv(report)),
    ])?);
    Ok(written)
}

/// Writes the CSV tables into `dir`, plus SVG histograms when `plot` is set.
pub fn export_report(dir: &Path, report: &EvalReport, plot: bool) -> Result<Vec<PathBuf>, Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (dir.join("cases.csv"), cases_csv(report)),
        (dir.join("summary.csv"), summary_csv(report)),
        (dir.join("histograms.csv"), histograms_csv(report)),
    ];
    if plot {
        files.push((
            dir.join("normalized.svg"),
            histogram_svg(
                "Normalized distance, all views",
                "normalized distance",
                &report.normalized,
            ),
        ));
        files.push((
            dir.join("real.svg"),
            histogram_svg("Real distance, all views", "distance (mm)", &report.real),
        ));
        for (v, r) in &report.per_view {
            files.push((
                dir.join(format!("normalized-{}.svg", v.name())),
                histogram_svg(
                    &format!("Normalized distance, {}", v.name()),
                    "normalized distance",
                    &r.normalized,
                ),
            ));
        }
    }
    write_all(files)
}

pub fn read_report(path: &Path) -> Result<EvalReport, Error> {
    crate::formats::read_json(path)
}
