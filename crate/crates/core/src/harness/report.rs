//! Summary tables and line charts built from `results.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{format_float, ResultRow, CSV_HEADER, RESULTS_FILE};
use crate::error::{Error, Result};
use crate::estimators::MultioverlapIndex;

/// Files written by [`write_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub summary: PathBuf,
    pub tables: Vec<PathBuf>,
    pub charts: Vec<PathBuf>,
}

/// One `(estimator, k, N, t)` group.
#[derive(Clone, Debug, PartialEq)]
struct SummaryRow {
    estimator: String,
    k: String,
    n: usize,
    t: f64,
    eps: f64,
    s_n: f64,
    rows: usize,
    value: f64,
    stderr: f64,
    bound: Option<f64>,
    rate: Option<f64>,
}

/// Tables split out of the summary: file stem and estimator prefix.
const TABLES: [(&str, &str); 6] = [
    ("thermal_variance", "thermal-variance"),
    ("quenched_variance", "quenched-variance"),
    ("mean_gap", "mean-gap"),
    ("decoupling", "thermal-decorrelation"),
    ("quenched_decoupling", "quenched-decorrelation"),
    ("fds", "fds:"),
];

fn malformed(line: usize, what: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("results line {line}: {what}"))
}

/// Parses a results file written by the run command.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(malformed(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(malformed(line, "wrong number of fields"));
        }
        let float = |j: usize| rec[j].parse::<f64>().map_err(|_| malformed(line, format!("bad {}", CSV_HEADER[j])));
        let int = |j: usize| rec[j].parse::<u64>().map_err(|_| malformed(line, format!("bad {}", CSV_HEADER[j])));
        rows.push(ResultRow {
            experiment_id: rec[0].to_string(),
            model: rec[1].to_string(),
            n: int(2)? as usize,
            eps: float(3)?,
            s_n: float(4)?,
            t: float(5)?,
            k: rec[6].to_string(),
            estimator: rec[7].to_string(),
            value: float(8)?,
            stderr: float(9)?,
            n_disorder: int(10)? as usize,
            n_blocks: int(11)? as usize,
            seed: int(12)?,
        });
    }
    Ok(rows)
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, usize, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.estimator.clone(), r.k.clone(), r.n, r.t.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let count = g.len() as f64;
            let value = g.iter().map(|r| r.value).sum::<f64>() / count;
            let stderr = g.iter().map(|r| r.stderr * r.stderr).sum::<f64>().sqrt() / count;
            let k: Option<MultioverlapIndex> = first.k.parse().ok();
            let bound = match (&k, first.estimator.as_str()) {
                (Some(k), "thermal-variance") => Some(k.thermal_bound(first.n, first.eps)),
                _ => None,
            };
            let rate = (first.estimator == "mean-gap").then(|| (first.s_n / first.n as f64).powf(1.0 / 6.0));
            SummaryRow {
                estimator: first.estimator.clone(),
                k: first.k.clone(),
                n: first.n,
                t: first.t,
                eps: first.eps,
                s_n: first.s_n,
                rows: g.len(),
                value,
                stderr,
                bound,
                rate,
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 11] = ["estimator", "k", "N", "t", "eps", "s_N", "rows", "value", "stderr", "bound", "rate"];

fn summary_csv(rows: &[&SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(SUMMARY_HEADER).map_err(err)?;
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.k.clone(),
            r.n.to_string(),
            format_float(r.t),
            format_float(r.eps),
            format_float(r.s_n),
            r.rows.to_string(),
            format_float(r.value),
            format_float(r.stderr),
            opt(r.bound),
            opt(r.rate),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Value against `log2 N`, one polyline per `(estimator, k, t)`; bound or
/// rate curves are dashed.
fn svg_chart(title: &str, rows: &[&SummaryRow]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let x = (r.n as f64).log2();
        let key = format!("{} k={} t={}", r.estimator, r.k, r.t);
        series.entry(key.clone()).or_default().push((x, r.value));
        if let Some(b) = r.bound.or(r.rate) {
            curves.entry(key).or_default().push((x, b));
        }
    }
    let points = series.values().chain(curves.values()).flatten().filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-size="14">{title}</text>"#);
    let _ = writeln!(
        s,
        r#"<polyline points="{pad},{pad} {pad},{b} {r},{b}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">log2 N</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="5" y="{}" font-size="11">{}</text>"#, pad - 5.0, format_float(y1));
    let _ = writeln!(s, r#"<text x="5" y="{}" font-size="11">{}</text>"#, h - pad, format_float(y0));
    let polyline = |pts: &[(f64, f64)], colour: &str, dashed: bool| {
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        format!(r#"<polyline points="{}" fill="none" stroke="{colour}"{dash}/>"#, coords.join(" "))
    };
    for (j, (key, pts)) in series.iter().enumerate() {
        let colour = PALETTE[j % PALETTE.len()];
        let _ = writeln!(s, "{}", polyline(pts, colour, false));
        if let Some(c) = curves.get(key) {
            let _ = writeln!(s, "{}", polyline(c, colour, true));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{colour}">{}</text>"#,
            w - 2.0 * pad - 120.0,
            pad + 14.0 * j as f64,
            key.replace('&', "&amp;").replace('<', "&lt;")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads `dir/results.csv` and writes `summary.csv`, one table per result
/// family present and, when `svg` is set, a chart per table.
pub fn write_report(dir: &Path, svg: bool) -> Result<ReportOutput> {
    let rows = read_results(&dir.join(RESULTS_FILE))?;
    let summary = summarize(&rows);
    let all: Vec<&SummaryRow> = summary.iter().collect();
    let summary_path = dir.join("summary.csv");
    write_file(&summary_path, &summary_csv(&all)?)?;
    let mut out = ReportOutput {
        summary: summary_path,
        tables: Vec::new(),
        charts: Vec::new(),
    };
    for (stem, prefix) in TABLES {
        let picked: Vec<&SummaryRow> = summary.iter().filter(|r| r.estimator.starts_with(prefix)).collect();
        if picked.is_empty() {
            continue;
        }
        let path = dir.join(format!("{stem}.csv"));
        write_file(&path, &summary_csv(&picked)?)?;
        out.tables.push(path);
        if svg {
            let path = dir.join(format!("{stem}.svg"));
            write_file(&path, svg_chart(stem, &picked).as_bytes())?;
            out.charts.push(path);
        }
    }
    Ok(out)
}
