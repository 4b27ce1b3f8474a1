//! Report files: JSON-lines records, a CSV/markdown table and plot series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::Cell;
use super::HarnessError;
use crate::metrics::dp_bound;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TABLE_FILE: &str = "table.csv";
pub const TABLE_MARKDOWN_FILE: &str = "table.md";
pub const PLOT_FILE: &str = "plot.csv";

/// Series name of the theoretical ceiling in the plot file.
const BOUND_SERIES: &str = "dp-bound";
/// Models below this F1 are left out of the plot.
const PLOT_MIN_F1: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Records,
    Table,
    Plot,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Records, OutputFormat::Table, OutputFormat::Plot];
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "records" => Ok(OutputFormat::Records),
            "table" => Ok(OutputFormat::Table),
            "plot" => Ok(OutputFormat::Plot),
            other => Err(format!("unknown format {other:?} (expected records, table or plot)")),
        }
    }
}

/// `inf` or the shortest round-trip decimal.
pub fn format_epsilon(e: f64) -> String {
    if e.is_infinite() {
        "inf".into()
    } else {
        format!("{e}")
    }
}

/// Interval cell in the style `0.22--0.24`.
pub fn format_interval(lower: f64, upper: f64) -> String {
    format!("{lower:.2}--{upper:.2}")
}

/// One leakage point of the plot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub epsilon: f64,
    pub advantage: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Leakage points of all attacked models with F1 ≥ 0.5.
pub fn plot_points(cells: &[Cell]) -> Vec<PlotPoint> {
    cells
        .iter()
        .filter_map(Cell::report)
        .filter(|r| r.utility.f1 >= PLOT_MIN_F1)
        .filter_map(|r| {
            r.attack.as_ref().map(|a| PlotPoint {
                series: r.variant().to_string(),
                epsilon: r.target_epsilon,
                advantage: a.interval.midpoint(),
                lower: a.interval.lower,
                upper: a.interval.upper,
            })
        })
        .collect()
}

/// `e^ε − 1 + δ` on a log grid over `[0.01, 10]` plus every finite ε given.
pub fn bound_curve(epsilons: &[f64], delta: f64) -> Result<Vec<(f64, f64)>, HarnessError> {
    const POINTS: usize = 31;
    let mut xs: Vec<f64> = (0..POINTS).map(|i| 10f64.powf(-2.0 + 3.0 * i as f64 / (POINTS - 1) as f64)).collect();
    xs.extend(epsilons.iter().copied().filter(|e| e.is_finite()));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.into_iter().map(|e| Ok((e, dp_bound(e, delta)?))).collect()
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

fn records_text(cells: &[Cell]) -> String {
    cells.iter().map(|c| serde_json::to_string(c).expect("cell serializes") + "\n").collect()
}

fn table_csv(cells: &[Cell]) -> Result<String, HarnessError> {
    let mut out = String::from("variant,epsilon,accuracy,f1,adv_lo,adv_hi,bound\n");
    for c in cells {
        let na = || "NA".to_string();
        let (acc, f1, lo, hi, bound) = match c.report() {
            Some(r) => {
                let (lo, hi) = r
                    .attack
                    .as_ref()
                    .map_or((na(), na()), |a| (a.interval.lower.to_string(), a.interval.upper.to_string()));
                let bound = format_epsilon(dp_bound(r.achieved_epsilon, r.delta)?);
                (r.utility.accuracy.to_string(), r.utility.f1.to_string(), lo, hi, bound)
            }
            None => (na(), na(), na(), na(), na()),
        };
        writeln!(out, "{},{},{acc},{f1},{lo},{hi},{bound}", csv_field(c.variant()), format_epsilon(c.epsilon()))
            .expect("string write");
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rows are variants, columns are budgets; each cell reads
/// `accuracy / F1 / advantage interval`.
fn table_markdown(cells: &[Cell]) -> String {
    let mut variants: Vec<&str> = Vec::new();
    let mut epsilons: Vec<f64> = Vec::new();
    for c in cells {
        if !variants.contains(&c.variant()) {
            variants.push(c.variant());
        }
        if !epsilons.iter().any(|e| e.total_cmp(&c.epsilon()).is_eq()) {
            epsilons.push(c.epsilon());
        }
    }
    let mut out = String::from("| variant |");
    for e in &epsilons {
        write!(out, " ε = {} |", format_epsilon(*e)).expect("string write");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(epsilons.len()));
    out.push('\n');
    for v in variants {
        write!(out, "| {v} |").expect("string write");
        for e in &epsilons {
            let cell = cells.iter().find(|c| c.variant() == v && c.epsilon().total_cmp(e).is_eq());
            let text = match cell.and_then(Cell::report) {
                Some(r) => {
                    let adv =
                        r.attack.as_ref().map_or("NA".into(), |a| format_interval(a.interval.lower, a.interval.upper));
                    format!("{:.1} / {:.1} / {adv}", 100.0 * r.utility.accuracy, 100.0 * r.utility.f1)
                }
                None => "NA".into(),
            };
            write!(out, " {text} |").expect("string write");
        }
        out.push('\n');
    }
    out.push_str("\nCells: accuracy % / F1 % / advantage 95% interval. NA: no feasible model or no attack.\n");
    out
}

fn plot_csv(cells: &[Cell]) -> Result<String, HarnessError> {
    let mut out = String::from("series,epsilon,advantage,lower,upper\n");
    for p in plot_points(cells) {
        writeln!(out, "{},{},{},{},{}", csv_field(&p.series), format_epsilon(p.epsilon), p.advantage, p.lower, p.upper)
            .expect("string write");
    }
    let delta = cells.iter().find_map(Cell::report).map_or(1e-5, |r| r.delta);
    let eps: Vec<f64> = cells.iter().map(Cell::epsilon).collect();
    for (e, b) in bound_curve(&eps, delta)? {
        writeln!(out, "{BOUND_SERIES},{e},{b},{b},{b}").expect("string write");
    }
    Ok(out)
}

/// Write the requested report files into `dir` (created if missing) and
/// return their paths. An empty cell list still yields files with headers.
pub fn emit_report(
    cells: &[Cell],
    dir: impl AsRef<Path>,
    formats: &[OutputFormat],
) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    for f in formats {
        let files: Vec<(&str, String)> = match f {
            OutputFormat::Records => vec![(RECORDS_FILE, records_text(cells))],
            OutputFormat::Table => vec![(TABLE_FILE, table_csv(cells)?), (TABLE_MARKDOWN_FILE, table_markdown(cells))],
            OutputFormat::Plot => vec![(PLOT_FILE, plot_csv(cells)?)],
        };
        for (name, text) in files {
            let p = dir.join(name);
            write(&p, &text)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Read a records file written by [`emit_report`].
pub fn parse_records(path: impl AsRef<Path>) -> Result<Vec<Cell>, HarnessError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: name.clone(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| HarnessError::Parse { path: name.clone(), reason: format!("line {}: {e}", i + 1) })
        })
        .collect()
}
