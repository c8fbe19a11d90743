use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{Comparison, MetricsRow};
use super::HarnessError;

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Fidelity (x) against alignment (y), one polyline per model in sweep order.
pub fn tradeoff_svg(rows: &[MetricsRow]) -> String {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        series.entry(&r.model_id).or_default().push((r.fidelity, r.alignment));
    }
    let finite = rows.iter().filter(|r| r.fidelity.is_finite() && r.alignment.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in finite {
        x0 = x0.min(r.fidelity);
        x1 = x1.max(r.fidelity);
        y0 = y0.min(r.alignment);
        y1 = y1.max(r.alignment);
    }
    if !(x0 < x1) {
        (x0, x1) = (x0.min(0.0) - 1.0, x1.max(0.0) + 1.0);
    }
    if !(y0 < y1) {
        (y0, y1) = (y0.min(0.0) - 1.0, y1.max(0.0) + 1.0);
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {b} H{r} M{m} {b} V{m}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">fidelity (input consistency)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">alignment (edit consistency)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (k, (id, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-model="{id}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{id}</text>"#,
            WIDTH - MARGIN - 100.0,
            MARGIN + 16.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest: serde_json::Value,
    pub comparisons: Vec<Comparison>,
}

/// Writes metrics.csv, tradeoff.svg and report.json into `dir`.
pub fn emit_report(
    rows: &[MetricsRow],
    comparisons: &[Comparison],
    manifest: serde_json::Value,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::InvalidArgument("no metrics rows".into()));
    }
    std::fs::create_dir_all(dir)?;
    let files = [
        (dir.join("metrics.csv"), metrics_csv(rows)?),
        (dir.join("tradeoff.svg"), tradeoff_svg(rows)),
        (
            dir.join("report.json"),
            serde_json::to_string_pretty(&Report {
                manifest,
                comparisons: comparisons.to_vec(),
            })? + "\n",
        ),
    ];
    let mut out = Vec::new();
    for (path, text) in files {
        std::fs::write(&path, text)?;
        out.push(path);
    }
    Ok(out)
}
