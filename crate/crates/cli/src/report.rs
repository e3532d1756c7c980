//! CSV, JSON and SVG emission. Every writer formats deterministically, so the
//! same outcome always produces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::scenario::{Constants, Outcome, Probe, Row, COLUMNS};
use crate::LabError;

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Time series with a commented schema block above the header.
pub fn timeseries_csv(rows: &[Row]) -> String {
    let mut out = String::from("# schema: timeseries v1\n");
    for (name, doc) in COLUMNS {
        let _ = writeln!(out, "# {name}: {doc}");
    }
    let header: Vec<&str> = COLUMNS.iter().map(|(n, _)| *n).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.values().iter().map(|v| v.map(num).unwrap_or_default()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    config: BTreeMap<String, String>,
    #[serde(rename = "final")]
    last: BTreeMap<&'static str, Option<f64>>,
    probes: &'a [Probe],
    constants: &'a Constants,
    all_pass: bool,
}

/// Config key/value pairs as an ordered map.
pub fn config_map(cfg: &RunConfig) -> BTreeMap<String, String> {
    cfg.to_text().lines().filter_map(|l| l.split_once(" = ")).map(|(k, v)| (k.to_owned(), v.to_owned())).collect()
}

pub fn summary_json(cfg: &RunConfig, outcome: &Outcome) -> String {
    let last_row = outcome.rows.last().expect("non-empty time series");
    let last = COLUMNS.iter().map(|(n, _)| *n).zip(last_row.values()).collect();
    let summary = Summary {
        config: config_map(cfg),
        last,
        probes: &outcome.probes,
        constants: &outcome.constants,
        all_pass: outcome.all_pass(),
    };
    to_json(&summary)
}

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 150.0;
const MARGIN: f64 = 30.0;
const PER_ROW: usize = 4;

/// Small multiples, one line chart per column against `t`.
pub fn timeseries_svg(rows: &[Row]) -> String {
    let panels = COLUMNS.len() - 1;
    let grid_rows = panels.div_ceil(PER_ROW);
    let width = PER_ROW as f64 * (PANEL_W + MARGIN) + MARGIN;
    let height = grid_rows as f64 * (PANEL_H + 2.0 * MARGIN) + MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let (t0, t1) = (t[0], *t.last().unwrap());
    for p in 0..panels {
        let col = p + 1;
        let x0 = MARGIN + (p % PER_ROW) as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN + (p / PER_ROW) as f64 * (PANEL_H + 2.0 * MARGIN);
        let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.values()[col].map(|v| (r.t, v))).collect();
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let tspan = if t1 > t0 { t1 - t0 } else { 1.0 };
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x0, y0 - 6.0, COLUMNS[col].0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{lo:.6e} .. {hi:.6e}</text>"#, x0, y0 + PANEL_H + 14.0);
        if pts.is_empty() || !lo.is_finite() || !hi.is_finite() {
            continue;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(t, v)| {
                let x = x0 + (t - t0) / tspan * PANEL_W;
                let y = y0 + PANEL_H - (v - lo) / span * PANEL_H;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="1.2" points="{}"/>"##,
            path.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `timeseries.csv`, `summary.json`, `trajectory.txt` and, if
/// requested, `timeseries.svg`. Returns the written paths.
pub fn write_bundle(cfg: &RunConfig, outcome: &Outcome) -> Result<Vec<PathBuf>, LabError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut written = vec![
        write(dir, "timeseries.csv", &timeseries_csv(&outcome.rows))?,
        write(dir, "summary.json", &summary_json(cfg, outcome))?,
    ];
    let traj = dir.join("trajectory.txt");
    sasaki_flow::io::save_trajectory(&traj, &outcome.trajectory)?;
    written.push(traj);
    if cfg.svg {
        written.push(write(dir, "timeseries.svg", &timeseries_svg(&outcome.rows))?);
    }
    Ok(written)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, LabError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Serialises any report as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serialises");
    s.push('\n');
    s
}
