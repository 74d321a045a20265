//! Plot-ready series files and self-rendered SVG line charts from a
//! metrics CSV.
//!
//! One panel per training-dynamics series: accuracy reward, policy entropy,
//! and response length. Each panel gets a two-column CSV that copies the
//! source values verbatim and an SVG whose polyline has exactly one vertex
//! per row; the exact value strings are embedded in the SVG `<desc>` so the
//! chart and the CSV can be diffed textually.

use planrl_core::error::{CoreError, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const EXPECTED_HEADER: [&str; 8] = [
    "step",
    "mean_total_reward",
    "mean_outcome",
    "mean_analytic",
    "mean_length",
    "policy_entropy",
    "clip_fraction",
    "mean_kl",
];

/// (panel name, source column) for the three training-dynamics panels.
const PANELS: [(&str, &str); 3] = [
    ("accuracy_reward", "mean_outcome"),
    ("policy_entropy", "policy_entropy"),
    ("response_length", "mean_length"),
];

struct MetricsTable {
    /// Raw string cells, one row per step, columns as in the header.
    rows: Vec<Vec<String>>,
    columns: Vec<String>,
}

impl MetricsTable {
    fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CoreError::BadMetricsRow {
                row: 0,
                message: format!("missing column `{name}`"),
            })
    }
}

fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let columns: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if columns != EXPECTED_HEADER {
        return Err(CoreError::BadMetricsRow {
            row: 0,
            message: format!("unexpected header {columns:?}"),
        });
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = record?;
        if record.len() != columns.len() {
            return Err(CoreError::BadMetricsRow {
                row: row_no,
                message: format!("{} fields, expected {}", record.len(), columns.len()),
            });
        }
        for (col, cell) in columns.iter().zip(record.iter()) {
            if cell.parse::<f64>().is_err() {
                return Err(CoreError::BadMetricsRow {
                    row: row_no,
                    message: format!("column `{col}` is not numeric: `{cell}`"),
                });
            }
        }
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(CoreError::BadMetricsRow {
            row: 0,
            message: "metrics CSV has no data rows".into(),
        });
    }
    Ok(MetricsTable { rows, columns })
}

fn render_svg(title: &str, steps: &[&str], values: &[&str]) -> String {
    let parsed: Vec<f64> = values.iter().map(|v| v.parse::<f64>().unwrap()).collect();
    let (w, h, margin) = (640.0, 400.0, 48.0);
    let min = parsed.iter().copied().fold(f64::INFINITY, f64::min);
    let max = parsed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if (max - min).abs() < 1e-300 {
        1.0
    } else {
        max - min
    };
    let n = parsed.len();

    let mut points = String::new();
    for (i, v) in parsed.iter().enumerate() {
        let x = if n == 1 {
            w / 2.0
        } else {
            margin + (i as f64 / (n - 1) as f64) * (w - 2.0 * margin)
        };
        let y = h - margin - ((v - min) / span) * (h - 2.0 * margin);
        let _ = write!(points, "{x:.2},{y:.2} ");
    }

    let mut desc = String::new();
    for (s, v) in steps.iter().zip(values) {
        let _ = writeln!(desc, "{s}:{v}");
    }

    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<title>{title}</title>
<desc>
{desc}</desc>
<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>
<polyline fill="none" stroke="#2b6cb0" stroke-width="1.5" points="{points}"/>
<text x="{tx}" y="24" text-anchor="middle" font-family="monospace" font-size="14">{title}</text>
</svg>
"##,
        tx = w / 2.0,
        points = points.trim_end(),
    )
}

/// Emits one series CSV and one SVG per panel. Returns the written paths.
pub fn emit_plots(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let table = read_metrics(metrics_csv)?;
    std::fs::create_dir_all(out_dir)?;
    let step_col = table.column_index("step")?;
    let mut written = Vec::new();

    for (panel, column) in PANELS {
        let col = table.column_index(column)?;
        let steps: Vec<&str> = table.rows.iter().map(|r| r[step_col].as_str()).collect();
        let values: Vec<&str> = table.rows.iter().map(|r| r[col].as_str()).collect();

        let series_path = out_dir.join(format!("{panel}.csv"));
        let mut series = String::from("step,value\n");
        for (s, v) in steps.iter().zip(&values) {
            let _ = writeln!(series, "{s},{v}");
        }
        std::fs::write(&series_path, series)?;
        written.push(series_path);

        let svg_path = out_dir.join(format!("{panel}.svg"));
        std::fs::write(&svg_path, render_svg(panel, &steps, &values))?;
        written.push(svg_path);
    }
    Ok(written)
}
