//! Curves from metric logs: CSV tables plus simple SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drac_core::augment::SAMPLED;

use crate::robustness::{self, RobustnessRow};
use crate::runlog::{find_logs, read_log, RunLog};

pub const PLOT_DIR: &str = "plots";
pub const ROBUSTNESS_FILE: &str = "robustness.csv";
pub const CURVE_HEADER: &str = "update,env_steps,mean_episode_return,median_episode_return,test_return";

/// One named polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub fn curve_csv(log: &RunLog) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in &log.records {
        let test = r.test_return.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.update, r.env_steps, r.mean_episode_return, r.median_episode_return, test
        );
    }
    out
}

/// Parsed rows of [`curve_csv`]: `(update, env_steps, mean, median, test)`.
pub fn parse_curve_csv(text: &str) -> Result<Vec<(u64, u64, f64, f64, Option<f64>)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        bail!("unexpected curve CSV header");
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                bail!("curve row needs 5 fields: {l:?}");
            }
            let test = if f[4].is_empty() { None } else { Some(f[4].parse()?) };
            Ok((f[0].parse()?, f[1].parse()?, f[2].parse()?, f[3].parse()?, test))
        })
        .collect()
}

/// Cumulative selection counts per augmentation, one row per update.
pub fn choice_csv(log: &RunLog) -> Option<String> {
    if log.records.iter().all(|r| r.aug_id.is_none()) {
        return None;
    }
    let mut out = String::from("update");
    for id in SAMPLED {
        out.push(',');
        out.push_str(id.as_str());
    }
    out.push('\n');
    let mut counts = [0u64; SAMPLED.len()];
    for r in &log.records {
        if let Some(pos) = r.aug_id.and_then(|a| SAMPLED.iter().position(|&s| s == a)) {
            counts[pos] += 1;
        }
        let _ = write!(out, "{}", r.update);
        for c in counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    Some(out)
}

fn choice_series(log: &RunLog) -> Vec<Series> {
    let mut series: Vec<Series> =
        SAMPLED.iter().map(|id| Series { name: id.as_str().into(), points: Vec::new() }).collect();
    let mut counts = [0u64; SAMPLED.len()];
    for r in &log.records {
        if let Some(pos) = r.aug_id.and_then(|a| SAMPLED.iter().position(|&s| s == a)) {
            counts[pos] += 1;
        }
        for (s, &c) in series.iter_mut().zip(&counts) {
            s.points.push((r.update as f64, c as f64));
        }
    }
    series.retain(|s| s.points.last().is_some_and(|p| p.1 > 0.0));
    series
}

const COLORS: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Line chart with axes, tick labels and a legend.
pub fn svg_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
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
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), top + ph + 18.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn run_label(log: &RunLog) -> String {
    log.path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .unwrap_or_else(|| log.header.run.clone())
}

/// Writes curves for every log below `log_dir` into `<log_dir>/plots`;
/// returns the files written.
pub fn emit_plots(log_dir: &Path) -> Result<Vec<PathBuf>> {
    let paths = find_logs(log_dir)?;
    if paths.is_empty() {
        bail!("schema error: no metrics logs (missing `{}`) under {}", crate::runlog::METRICS_FILE, log_dir.display());
    }
    let out_dir = log_dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let p = out_dir.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(())
    };
    let mut by_method: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    for path in &paths {
        let log = read_log(path)?;
        let label = run_label(&log);
        write(format!("{label}.returns.csv"), curve_csv(&log))?;
        let train = Series {
            name: "train".into(),
            points: log.records.iter().map(|r| (r.env_steps as f64, r.mean_episode_return)).collect(),
        };
        let test = Series {
            name: "test".into(),
            points: log
                .records
                .iter()
                .filter_map(|r| r.test_return.map(|t| (r.env_steps as f64, t)))
                .collect(),
        };
        by_method
            .entry(log.header.method.clone())
            .or_default()
            .push(Series { name: label.clone(), points: test.points.clone() });
        write(format!("{label}.returns.svg"), svg_chart(&label, "environment steps", "return", &[train, test]))?;
        if let Some(csv) = choice_csv(&log) {
            write(format!("{label}.choices.csv"), csv)?;
            write(
                format!("{label}.choices.svg"),
                svg_chart(&format!("{label} selections"), "update", "cumulative count", &choice_series(&log)),
            )?;
        }
    }
    for (method, series) in &by_method {
        write(
            format!("{method}.test_returns.svg"),
            svg_chart(&format!("{method} test return"), "environment steps", "return", series),
        )?;
    }
    let rows = collect_robustness(log_dir)?;
    if !rows.is_empty() {
        write("robustness_report.csv".into(), robustness::to_csv(&rows))?;
    }
    Ok(written)
}

/// Robustness rows from every `robustness.csv` below `dir` (outside `plots`).
pub fn collect_robustness(dir: &Path) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    let mut files = Vec::new();
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n != PLOT_DIR) {
                    stack.push(p);
                }
            } else if p.file_name().is_some_and(|n| n == ROBUSTNESS_FILE) {
                files.push(p);
            }
        }
    }
    files.sort();
    for f in files {
        rows.extend(robustness::parse_csv(&std::fs::read_to_string(&f)?)?);
    }
    Ok(rows)
}
