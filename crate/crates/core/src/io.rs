//! CSV files: per-step traces and one-row run reports.
//!
//! Trace columns are `step, t, vehicle_id, x, y, v, phi, a_cmd, delta_cmd,
//! gap, desired_gap, gap_error, solver_status, rx_0 .. rx_{N-2}`. `rx_j` is
//! the delivery flag (`1`/`0`) of vehicle `j`'s beacon at that step and is
//! empty where there is no link (the leader, and `j >= vehicle_id`). The gap
//! columns are empty for the leader; `gap_error` is the signed `gap -
//! desired_gap` in meters. Floats use the shortest representation that
//! parses back to the same value.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsReport;
use crate::mpc::{Mode, SolveStatus};
use crate::sim::SimTrace;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

pub const TRACE_COLUMNS: [&str; 13] = [
    "step",
    "t",
    "vehicle_id",
    "x",
    "y",
    "v",
    "phi",
    "a_cmd",
    "delta_cmd",
    "gap",
    "desired_gap",
    "gap_error",
    "solver_status",
];

pub fn trace_header(n_vehicles: usize) -> Vec<String> {
    TRACE_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain((0..n_vehicles.saturating_sub(1)).map(|j| format!("rx_{j}")))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn status_label(status: Option<SolveStatus>) -> &'static str {
    match status {
        None => "leader",
        Some(s) => s.as_str(),
    }
}

pub fn write_trace<W: Write>(trace: &SimTrace, out: W) -> Result<(), IoError> {
    let n = trace.n_vehicles();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n))?;
    let mut record: Vec<String> = Vec::with_capacity(TRACE_COLUMNS.len() + n);
    for s in &trace.steps {
        for (i, log) in s.vehicles.iter().enumerate() {
            record.clear();
            let st = &log.state;
            record.extend([
                s.step.to_string(),
                s.t.to_string(),
                i.to_string(),
                st.x.to_string(),
                st.y.to_string(),
                st.v.to_string(),
                st.phi.to_string(),
                log.input.a.to_string(),
                log.input.delta.to_string(),
                opt(log.gap),
                opt(log.desired_gap),
                opt(log.gap.zip(log.desired_gap).map(|(g, d)| g - d)),
                status_label(log.status).to_string(),
            ]);
            for j in 0..n - 1 {
                record.push(match log.delivered.get(j) {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => String::new(),
                });
            }
            w.write_record(&record)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One parsed trace line.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub vehicle_id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub phi: f64,
    pub a_cmd: f64,
    pub delta_cmd: f64,
    pub gap: Option<f64>,
    pub desired_gap: Option<f64>,
    pub gap_error: Option<f64>,
    pub solver_status: String,
    pub rx: Vec<Option<bool>>,
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let fixed: Vec<&str> = header.iter().take(TRACE_COLUMNS.len()).collect();
    if fixed != TRACE_COLUMNS {
        return Err(IoError::Malformed(format!("unexpected header {header:?}")));
    }
    let n_rx = header.len() - TRACE_COLUMNS.len();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| IoError::Malformed(format!("row {}: bad {col}", line + 1));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(TRACE_COLUMNS[k]));
        let maybe = |k: usize| -> Result<Option<f64>, IoError> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| rec[k].parse::<usize>().map_err(|_| bad(TRACE_COLUMNS[k]));
        let rx = (0..n_rx)
            .map(|j| match &rec[TRACE_COLUMNS.len() + j] {
                "" => Ok(None),
                "1" => Ok(Some(true)),
                "0" => Ok(Some(false)),
                _ => Err(bad("rx flag")),
            })
            .collect::<Result<_, _>>()?;
        rows.push(TraceRow {
            step: int(0)?,
            t: num(1)?,
            vehicle_id: int(2)?,
            x: num(3)?,
            y: num(4)?,
            v: num(5)?,
            phi: num(6)?,
            a_cmd: num(7)?,
            delta_cmd: num(8)?,
            gap: maybe(9)?,
            desired_gap: maybe(10)?,
            gap_error: maybe(11)?,
            solver_status: rec[12].to_string(),
            rx,
        });
    }
    Ok(rows)
}

/// Speed difference (max - min over the string) per step of a parsed trace.
pub fn speed_difference_rows(rows: &[TraceRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for row in rows {
        match out.last_mut() {
            Some((t, lo, hi)) if *t == row.t => {
                *lo = lo.min(row.v);
                *hi = hi.max(row.v);
            }
            _ => out.push((row.t, row.v, row.v)),
        }
    }
    out.into_iter().map(|(t, lo, hi)| (t, hi - lo)).collect()
}

/// Outcome of one run, as written to `report.csv` and to sweep aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: Mode,
    pub n_vehicles: usize,
    pub per: f64,
    pub seed: u64,
    /// `ok`, `collision`, or `error`.
    pub status: String,
    pub error: Option<String>,
    pub mean_speed_diff: Option<f64>,
    pub max_speed_diff: Option<f64>,
    pub p95_error: Option<f64>,
    pub max_amplification: Option<f64>,
    /// Settle time after the first and second leader events, if settled.
    pub settle_1: Option<f64>,
    pub settle_2: Option<f64>,
    pub min_gap: Option<f64>,
    pub max_abs_accel: Option<f64>,
    pub fallback_steps: Option<usize>,
}

impl ReportRow {
    pub fn from_report(mode: Mode, n_vehicles: usize, per: f64, seed: u64, r: &MetricsReport) -> Self {
        let settle = |k: usize| r.settle_times.get(k).filter(|s| s.settled).map(|s| s.seconds);
        Self {
            mode,
            n_vehicles,
            per,
            seed,
            status: "ok".into(),
            error: None,
            mean_speed_diff: Some(r.mean_speed_diff),
            max_speed_diff: Some(r.max_speed_diff),
            p95_error: Some(r.p95_error),
            max_amplification: r.max_amplification(),
            settle_1: settle(0),
            settle_2: settle(1),
            min_gap: Some(r.min_gap),
            max_abs_accel: Some(r.max_abs_accel),
            fallback_steps: Some(r.fallback_steps),
        }
    }

    pub fn failed(mode: Mode, n_vehicles: usize, per: f64, seed: u64, status: &str, error: String) -> Self {
        Self {
            mode,
            n_vehicles,
            per,
            seed,
            status: status.into(),
            error: Some(error),
            mean_speed_diff: None,
            max_speed_diff: None,
            p95_error: None,
            max_amplification: None,
            settle_1: None,
            settle_2: None,
            min_gap: None,
            max_abs_accel: None,
            fallback_steps: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub const REPORT_COLUMNS: [&str; 15] = [
    "mode",
    "n_vehicles",
    "per",
    "seed",
    "status",
    "error",
    "mean_speed_diff",
    "max_speed_diff",
    "p95_error",
    "max_amplification",
    "settle_1",
    "settle_2",
    "min_gap",
    "max_abs_accel",
    "fallback_steps",
];

pub fn write_reports<W: Write>(rows: &[ReportRow], out: W) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_reports<R: Read>(input: R) -> Result<Vec<ReportRow>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let file_err = |source| IoError::File { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(file_err)?;
    fs::rename(&tmp, path).map_err(file_err)
}

pub fn write_trace_file(trace: &SimTrace, path: &Path) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn write_reports_file(rows: &[ReportRow], path: &Path) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_reports(rows, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn read_reports_file(path: &Path) -> Result<Vec<ReportRow>, IoError> {
    let f = fs::File::open(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    read_reports(f)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>, IoError> {
    let f = fs::File::open(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    read_trace(f)
}
