//! Evaluation reports and their JSON, CSV and radar-chart renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// Outcome for one image or frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub method: String,
    pub status: RecordStatus,
    /// Written file, relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub faces: usize,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

/// Dataset-level numbers for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    /// Items processed, failed ones included.
    pub images: usize,
    pub failures: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// SHA-256 of the resolved configuration.
    pub config_hash: String,
    pub aggregates: Vec<MethodAggregate>,
    pub records: Vec<ImageRecord>,
}

impl EvaluationReport {
    pub fn aggregate(&self, method: &str) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.status == RecordStatus::Failed)
    }

    /// Concatenates several reports, e.g. one run per method.
    ///
    /// The hash becomes the hashes joined with `+` in the given order.
    pub fn merge(reports: impl IntoIterator<Item = EvaluationReport>) -> EvaluationReport {
        let mut hashes = Vec::new();
        let mut out = EvaluationReport {
            config_hash: String::new(),
            aggregates: Vec::new(),
            records: Vec::new(),
        };
        for r in reports {
            hashes.push(r.config_hash);
            out.aggregates.extend(r.aggregates);
            out.records.extend(r.records);
        }
        out.config_hash = hashes.join("+");
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("results.json: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn metric_columns(&self) -> Vec<String> {
        let keys: BTreeSet<&String> = self.aggregates.iter().flat_map(|a| a.metrics.keys()).collect();
        keys.into_iter().cloned().collect()
    }

    /// One row per method; absent metrics are empty cells.
    pub fn to_csv(&self) -> String {
        let cols = self.metric_columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "images".into(), "failures".into()];
        header.extend(cols.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for a in &self.aggregates {
            let mut row = vec![a.method.clone(), a.images.to_string(), a.failures.to_string()];
            row.extend(cols.iter().map(|c| a.metrics.get(c).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn radar_svg(&self) -> String {
        radar_svg(&self.aggregates)
    }
}

/// How a metric maps onto a radar axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisScale {
    pub metric: &'static str,
    pub min: f64,
    pub max: f64,
    /// Lower raw values plot further out.
    pub lower_is_better: bool,
}

const fn axis(metric: &'static str, min: f64, max: f64, lower_is_better: bool) -> AxisScale {
    AxisScale {
        metric,
        min,
        max,
        lower_is_better,
    }
}

/// Radar axes in drawing order. Metrics not listed are not drawn.
pub const RADAR_AXES: [AxisScale; 12] = [
    axis("psnr", 0.0, 50.0, false),
    axis("ssim", 0.0, 1.0, false),
    axis("fid", 0.0, 300.0, true),
    axis("va", 0.0, 100.0, true),
    axis("tar_at_far", 0.0, 100.0, true),
    axis("psr", 0.0, 100.0, false),
    axis("age_mae", 0.0, 30.0, true),
    axis("gender_acc", 0.0, 100.0, false),
    axis("ethnicity_acc", 0.0, 100.0, false),
    axis("expression_acc", 0.0, 100.0, false),
    axis("landmark_nme", 0.0, 1.0, true),
    axis("hr_mae", 0.0, 30.0, true),
];

impl AxisScale {
    /// Position along the axis in `[0, 1]`, outward meaning better.
    pub fn normalize(&self, v: f64) -> f64 {
        let t = ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        if self.lower_is_better {
            1.0 - t
        } else {
            t
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One closed polygon per method over the axes any method reports.
pub fn radar_svg(aggregates: &[MethodAggregate]) -> String {
    let axes: Vec<&AxisScale> = RADAR_AXES
        .iter()
        .filter(|a| aggregates.iter().any(|m| m.metrics.contains_key(a.metric)))
        .collect();
    let (cx, cy, r) = (250.0, 230.0, 160.0);
    let n = axes.len().max(1) as f64;
    let point = |i: usize, t: f64| {
        let ang = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / n;
        (cx + r * t * ang.cos(), cy + r * t * ang.sin())
    };
    let height = 480 + 20 * aggregates.len();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"{height}\" viewBox=\"0 0 500 {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..axes.len())
            .map(|i| {
                let (x, y) = point(i, ring);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, "<polyline class=\"grid\" points=\"{} {}\" fill=\"none\" stroke=\"#ccc\"/>", pts.join(" "), pts.first().cloned().unwrap_or_default());
    }
    for (i, a) in axes.iter().enumerate() {
        let (x, y) = point(i, 1.0);
        let (lx, ly) = point(i, 1.12);
        let _ = writeln!(s, "<line class=\"axis\" x1=\"{cx:.2}\" y1=\"{cy:.2}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#999\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\">{}{}</text>",
            a.metric,
            if a.lower_is_better { " (inv)" } else { "" }
        );
    }
    for (k, m) in aggregates.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = axes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let t = m.metrics.get(a.metric).map(|&v| a.normalize(v)).unwrap_or(0.0);
                let (x, y) = point(i, t);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polygon class=\"method\" data-method=\"{}\" points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"{color}\" stroke-width=\"2\"/>",
            escape(&m.method),
            pts.join(" ")
        );
        let ly = 470 + 20 * k;
        let _ = writeln!(s, "<rect x=\"20\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>", ly - 10);
        let _ = writeln!(s, "<text x=\"40\" y=\"{ly}\">{}</text>", escape(&m.method));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `results.json`, `results.csv` and `radar.svg` into `dir`.
pub fn emit_report(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.aggregates.is_empty() {
        return Err(Error::Config("report has no aggregates to emit".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("results.json", report.to_json()),
        ("results.csv", report.to_csv()),
        ("radar.svg", report.radar_svg()),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        out.push(p);
    }
    Ok(out)
}
