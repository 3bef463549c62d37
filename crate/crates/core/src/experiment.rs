//! Scenario runs, PER x length sweeps, and figure data built from their outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError, ReportRow};
use crate::metrics::{self, MetricsError};
use crate::mpc::Mode;
use crate::sim::{self, LeaderProfile, ScenarioConfig, SimError, SimTrace};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Validation(_) | ExperimentError::Sim(SimError::Config(_)) => 1,
            _ => 2,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ExperimentError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Validation(format!("{}: {e}", path.display())))
}

/// Parses and validates a scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ExperimentError> {
    let cfg: ScenarioConfig = read_json(path)?;
    cfg.validate()
        .map_err(|e| ExperimentError::Validation(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn report_row(trace: &SimTrace) -> Result<ReportRow, MetricsError> {
    let c = &trace.config;
    Ok(ReportRow::from_report(c.mode, c.n_vehicles, c.per, c.seed, &metrics::report(trace)?))
}

/// Runs one scenario and writes `trace.csv` and `report.csv` into `out_dir`.
///
/// A collision still writes `report.csv` (with the failure) before the error
/// is returned.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<ReportRow, ExperimentError> {
    config.validate().map_err(|e| ExperimentError::Validation(e.to_string()))?;
    let report_path = out_dir.join("report.csv");
    let trace = match sim::run(config) {
        Ok(t) => t,
        Err(e) => {
            let row = failure_row(config, &e);
            io::write_reports_file(&[row], &report_path)?;
            return Err(e.into());
        }
    };
    io::write_trace_file(&trace, &out_dir.join("trace.csv"))?;
    let row = report_row(&trace)?;
    io::write_reports_file(std::slice::from_ref(&row), &report_path)?;
    Ok(row)
}

fn failure_row(c: &ScenarioConfig, e: &SimError) -> ReportRow {
    let status = match e {
        SimError::Collision { .. } => "collision",
        _ => "error",
    };
    ReportRow::failed(c.mode, c.n_vehicles, c.per, c.seed, status, e.to_string())
}

mod defaults {
    pub fn modes() -> Vec<crate::mpc::Mode> {
        crate::mpc::Mode::ALL.to_vec()
    }
    pub fn lengths() -> Vec<usize> {
        vec![5, 10, 15, 20, 25]
    }
    pub fn pers() -> Vec<f64> {
        vec![0.0, 0.2, 0.4, 0.6]
    }
    pub fn seeds() -> Vec<u64> {
        (0..5).collect()
    }
    pub fn template() -> crate::sim::ScenarioConfig {
        crate::sim::ScenarioConfig {
            duration: 300.0,
            leader_profile: crate::sim::LeaderProfile::time_varying(),
            ..Default::default()
        }
    }
}

/// Grid of scenarios: every combination of mode, length, PER and seed
/// applied to a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "defaults::modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "defaults::lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "defaults::pers")]
    pub pers: Vec<f64>,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::template")]
    pub template: ScenarioConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            modes: defaults::modes(),
            lengths: defaults::lengths(),
            pers: defaults::pers(),
            seeds: defaults::seeds(),
            template: defaults::template(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mode: Mode,
    pub n_vehicles: usize,
    pub per: f64,
    pub seed: u64,
}

impl Cell {
    pub fn config(&self, template: &ScenarioConfig) -> ScenarioConfig {
        ScenarioConfig {
            mode: self.mode,
            n_vehicles: self.n_vehicles,
            per: self.per,
            seed: self.seed,
            ..template.clone()
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}_n{}_per{}_seed{}.csv", self.mode, self.n_vehicles, self.per, self.seed)
    }

    fn matches(&self, row: &ReportRow) -> bool {
        row.mode == self.mode
            && row.n_vehicles == self.n_vehicles
            && row.per == self.per
            && row.seed == self.seed
    }
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let spec: Self = read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Validation(format!("sweep: {m}")));
        if self.modes.is_empty() || self.lengths.is_empty() || self.pers.is_empty() || self.seeds.is_empty() {
            return bad("modes, lengths, pers and seeds must be non-empty");
        }
        if self.pers.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("pers must lie in [0, 1]");
        }
        for cell in self.cells() {
            cell.config(&self.template)
                .validate()
                .map_err(|e| ExperimentError::Validation(format!("sweep cell {}: {e}", cell.file_name())))?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &mode in &self.modes {
            for &n_vehicles in &self.lengths {
                for &per in &self.pers {
                    for &seed in &self.seeds {
                        cells.push(Cell { mode, n_vehicles, per, seed });
                    }
                }
            }
        }
        cells
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }
}

/// Runs one cell, or reuses its file from an earlier sweep into the same directory.
pub fn run_cell(cell: &Cell, template: &ScenarioConfig, cells_dir: &Path) -> Result<ReportRow, ExperimentError> {
    let path = cells_dir.join(cell.file_name());
    if let Ok(rows) = io::read_reports_file(&path) {
        if let [row] = rows.as_slice() {
            if cell.matches(row) {
                return Ok(row.clone());
            }
        }
    }
    let config = cell.config(template);
    let row = match sim::run(&config) {
        Ok(trace) => report_row(&trace)?,
        Err(e) => failure_row(&config, &e),
    };
    io::write_reports_file(std::slice::from_ref(&row), &path)?;
    Ok(row)
}

/// Runs every cell on `workers` threads and writes `aggregate.csv`.
///
/// Failed cells are recorded in their row and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, workers: Option<usize>) -> Result<Vec<ReportRow>, ExperimentError> {
    spec.validate()?;
    let cells_dir = out_dir.join("cells");
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let cells = spec.cells();
    let rows: Vec<ReportRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(c, &spec.template, &cells_dir))
            .collect::<Result<_, _>>()
    })?;
    io::write_reports_file(&rows, &aggregate_path(out_dir))?;
    Ok(rows)
}

pub fn aggregate_path(out_dir: &Path) -> PathBuf {
    out_dir.join("aggregate.csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    /// Speed difference over time, from traces.
    Fig4,
    /// Mean speed difference vs string length, one series per mode and PER.
    Fig5,
    /// 95% gap error vs string length, one series per mode and PER.
    Fig6,
    /// Mean speed difference vs string length for ACC and the cooperative
    /// modes at the lowest and highest PER.
    Fig7,
}

impl std::str::FromStr for Figure {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            "fig6" => Ok(Figure::Fig6),
            "fig7" => Ok(Figure::Fig7),
            _ => Err(ExperimentError::Validation(format!("unknown figure id '{s}'"))),
        }
    }
}

/// One point of a long-format plot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
    /// Cells averaged into `y`.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotData {
    pub points: Vec<PlotPoint>,
    /// `(series, x)` pairs with no successful cell behind them.
    pub missing: Vec<(String, f64)>,
}

fn series_label(mode: Mode, per: Option<f64>) -> String {
    match per {
        Some(p) => format!("{mode} per={p}"),
        None => mode.to_string(),
    }
}

/// Seed-averaged points for `figure` from sweep rows.
pub fn emit_plot_data(rows: &[ReportRow], figure: Figure) -> Result<PlotData, ExperimentError> {
    if rows.is_empty() {
        return Ok(PlotData::default());
    }
    let metric = |r: &ReportRow| match figure {
        Figure::Fig6 => r.p95_error,
        _ => r.mean_speed_diff,
    };
    let pers = {
        let mut p: Vec<f64> = rows.iter().map(|r| r.per).collect();
        p.sort_by(f64::total_cmp);
        p.dedup();
        p
    };
    let lengths = {
        let mut n: Vec<usize> = rows.iter().map(|r| r.n_vehicles).collect();
        n.sort_unstable();
        n.dedup();
        n
    };
    // (series, mode, PER filter); `None` pools every PER.
    let series: Vec<(String, Mode, Option<f64>)> = match figure {
        Figure::Fig4 => {
            return Err(ExperimentError::Validation("fig4 is built from trace files".into()));
        }
        Figure::Fig5 | Figure::Fig6 => {
            let mut modes: Vec<Mode> = rows.iter().map(|r| r.mode).filter(|m| m.cooperative()).collect();
            modes.sort_by_key(|m| m.as_str());
            modes.dedup();
            modes
                .into_iter()
                .flat_map(|m| pers.iter().map(move |&p| (series_label(m, Some(p)), m, Some(p))))
                .collect()
        }
        Figure::Fig7 => {
            let lo = pers[0];
            let hi = *pers.last().unwrap();
            let mut s = vec![(series_label(Mode::Acc, None), Mode::Acc, None)];
            for m in [Mode::Cacc, Mode::Platooning] {
                s.push((series_label(m, Some(lo)), m, Some(lo)));
                if hi != lo {
                    s.push((series_label(m, Some(hi)), m, Some(hi)));
                }
            }
            s
        }
    };
    let mut out = PlotData::default();
    for (label, mode, per) in &series {
        for &n in &lengths {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == *mode && r.n_vehicles == n && per.map_or(true, |p| r.per == p))
                .filter(|r| r.is_ok())
                .filter_map(metric)
                .collect();
            if values.is_empty() {
                out.missing.push((label.clone(), n as f64));
            } else {
                out.points.push(PlotPoint {
                    series: label.clone(),
                    x: n as f64,
                    y: values.iter().sum::<f64>() / values.len() as f64,
                    samples: values.len(),
                });
            }
        }
    }
    Ok(out)
}

/// Speed difference over time for each trace file; the series is the
/// trace's directory name (or file stem when it is not `trace.csv`).
pub fn fig4_from_traces(paths: &[PathBuf]) -> Result<PlotData, ExperimentError> {
    let mut out = PlotData::default();
    for path in paths {
        let label = match path.file_name().and_then(|f| f.to_str()) {
            Some("trace.csv") => path.parent().and_then(|p| p.file_name()),
            _ => path.file_stem(),
        }
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
        let rows = io::read_trace_file(path)?;
        out.points.extend(io::speed_difference_rows(&rows).into_iter().map(|(t, d)| PlotPoint {
            series: label.clone(),
            x: t,
            y: d,
            samples: 1,
        }));
    }
    Ok(out)
}

pub fn write_plot_data<W: std::io::Write>(data: &PlotData, out: W) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["series", "x", "y", "samples"])?;
    for p in &data.points {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_plot_data<R: std::io::Read>(input: R) -> Result<Vec<PlotPoint>, IoError> {
    Ok(csv::Reader::from_reader(input).deserialize().collect::<Result<_, _>>()?)
}

/// Seed-averaged metric per `(mode, n, per)`.
pub fn seed_means(rows: &[ReportRow], metric: impl Fn(&ReportRow) -> Option<f64>) -> BTreeMap<(String, usize, String), f64> {
    let mut acc: BTreeMap<(String, usize, String), (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        if let Some(v) = metric(r) {
            let e = acc.entry((r.mode.to_string(), r.n_vehicles, r.per.to_string())).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

/// Checked-in step-test scenario for one mode.
pub fn step_test_config(mode: Mode) -> ScenarioConfig {
    ScenarioConfig { mode, leader_profile: LeaderProfile::step_test(), ..ScenarioConfig::default() }
}
