//! Evaluation quantities computed from simulation traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::Mode;
use crate::sim::{LeaderEvent, SimTrace};

/// Speed below which a CACC time-gap error is not defined.
pub const MIN_TIME_GAP_SPEED: f64 = 0.1;
/// Smallest upstream peak deviation for which an amplification ratio is reported (m/s).
pub const AMPLIFICATION_FLOOR: f64 = 0.01;
/// Speed band around a setpoint that counts as settled (m/s).
pub const SETTLE_BAND: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// Per-vehicle gap errors; `errors[i][k]` is `None` for the leader and where undefined.
///
/// CACC reports the time-gap error `|gap - desired| / v` in seconds, ACC and
/// platooning the distance error `|gap - desired|` in meters.
pub fn gap_error_series(trace: &SimTrace) -> Result<Vec<Vec<Option<f64>>>, MetricsError> {
    if trace.steps.is_empty() {
        return Err(MetricsError::Empty("trace has no steps"));
    }
    let mode = trace.mode();
    let n = trace.n_vehicles();
    Ok((0..n)
        .map(|i| {
            trace
                .steps
                .iter()
                .map(|s| {
                    let log = &s.vehicles[i];
                    let (gap, desired) = (log.gap?, log.desired_gap?);
                    gap_error(mode, gap, desired, log.state.v)
                })
                .collect()
        })
        .collect())
}

/// Absolute spacing error for one sample under `mode`'s error convention.
pub fn gap_error(mode: Mode, gap: f64, desired: f64, v: f64) -> Option<f64> {
    match mode {
        Mode::Cacc if v < MIN_TIME_GAP_SPEED => None,
        Mode::Cacc => Some((gap - desired).abs() / v),
        Mode::Acc | Mode::Platooning => Some((gap - desired).abs()),
    }
}

/// Nearest-rank percentile: element `ceil(p/100 * n)` (1-based) of the sorted values.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty("percentile of no values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn percentile95(values: &[f64]) -> Result<f64, MetricsError> {
    percentile(values, 95.0)
}

/// Max minus min speed over the string at every step, and its mean.
pub fn speed_difference(trace: &SimTrace) -> (Vec<f64>, f64) {
    let series: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| {
            let (lo, hi) = s
                .vehicles
                .iter()
                .map(|v| v.state.v)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect();
    let mean = if series.is_empty() { 0.0 } else { series.iter().sum::<f64>() / series.len() as f64 };
    (series, mean)
}

/// Indices of the steps with `t0 <= t < t1`.
fn window(trace: &SimTrace, t0: f64, t1: f64) -> std::ops::Range<usize> {
    let eps = 1e-9;
    let a = trace.steps.partition_point(|s| s.t < t0 - eps);
    let b = trace.steps.partition_point(|s| s.t < t1 - eps);
    a..b.max(a)
}

/// Peak `|v_i - baseline|` over a time window, for each vehicle.
pub fn peak_deviation(trace: &SimTrace, baseline: f64, t0: f64, t1: f64) -> Vec<f64> {
    let range = window(trace, t0, t1);
    (0..trace.n_vehicles())
        .map(|i| {
            trace.steps[range.clone()]
                .iter()
                .map(|s| (s.vehicles[i].state.v - baseline).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Ratios of consecutive peak speed deviations, `ratio[k]` for the pair `(k+1, k+2)`.
///
/// Only follower pairs are reported (`i >= 2`). A ratio is `None` when the
/// upstream peak is below [`AMPLIFICATION_FLOOR`].
pub fn string_stability_ratio(trace: &SimTrace, baseline: f64, t0: f64, t1: f64) -> Vec<Option<f64>> {
    ratios_from_peaks(&peak_deviation(trace, baseline, t0, t1))
}

pub fn ratios_from_peaks(peaks: &[f64]) -> Vec<Option<f64>> {
    (2..peaks.len())
        .map(|i| (peaks[i - 1] >= AMPLIFICATION_FLOOR).then(|| peaks[i] / peaks[i - 1]))
        .collect()
}

/// Window over which a leader event is evaluated: from its start until the
/// next event starts (or the trace ends).
pub fn event_window(trace: &SimTrace, event: &LeaderEvent) -> (f64, f64) {
    let next = trace
        .config
        .leader_profile
        .events()
        .into_iter()
        .map(|e| e.start)
        .filter(|s| *s > event.start + 1e-9)
        .fold(f64::INFINITY, f64::min);
    let end = trace.steps.last().map_or(event.start, |s| s.t + trace.dt());
    (event.start, next.min(end))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settle {
    /// Seconds after the leader reaches the new setpoint.
    pub seconds: f64,
    pub settled: bool,
}

/// Time from the end of the leader's ramp until every vehicle stays within
/// `band` of the new setpoint for the rest of the event window.
pub fn settle_time(trace: &SimTrace, event: &LeaderEvent, band: f64) -> Settle {
    let (_, w_end) = event_window(trace, event);
    let range = window(trace, event.end, w_end);
    let steps = &trace.steps[range];
    let length = w_end - event.end;
    let inside = |k: usize| steps[k].vehicles.iter().all(|v| (v.state.v - event.to).abs() <= band);
    // Last step outside the band.
    match (0..steps.len()).rev().find(|&k| !inside(k)) {
        None => Settle { seconds: 0.0, settled: !steps.is_empty() },
        Some(k) if k + 1 == steps.len() => Settle { seconds: length, settled: false },
        Some(k) => Settle { seconds: steps[k + 1].t - event.end, settled: true },
    }
}

/// First time each vehicle's speed departs `threshold` from its speed at the event start.
pub fn onset_times(trace: &SimTrace, event: &LeaderEvent, threshold: f64) -> Vec<Option<f64>> {
    let (w0, w1) = event_window(trace, event);
    let range = window(trace, w0, w1);
    let steps = &trace.steps[range];
    (0..trace.n_vehicles())
        .map(|i| {
            let v0 = steps.first()?.vehicles[i].state.v;
            steps
                .iter()
                .find(|s| (s.vehicles[i].state.v - v0).abs() >= threshold)
                .map(|s| s.t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    /// Pooled over all followers and steps (s for CACC, m otherwise).
    pub p95_error: f64,
    pub mean_speed_diff: f64,
    pub max_speed_diff: f64,
    pub per_vehicle_p95: Vec<Option<f64>>,
    /// Per leader event, or one entry over the whole run for smooth profiles.
    pub amplification_ratios: Vec<Vec<Option<f64>>>,
    pub settle_times: Vec<Settle>,
    pub min_gap: f64,
    pub max_abs_accel: f64,
    pub fallback_steps: usize,
}

impl MetricsReport {
    pub fn max_amplification(&self) -> Option<f64> {
        self.amplification_ratios.iter().flatten().flatten().cloned().reduce(f64::max)
    }
}

pub fn report(trace: &SimTrace) -> Result<MetricsReport, MetricsError> {
    let errors = gap_error_series(trace)?;
    let pooled: Vec<f64> = errors.iter().flatten().flatten().cloned().collect();
    let p95_error = percentile95(&pooled)?;
    let per_vehicle_p95 = errors
        .iter()
        .map(|series| {
            let vals: Vec<f64> = series.iter().flatten().cloned().collect();
            percentile95(&vals).ok()
        })
        .collect();

    let (diff, mean_speed_diff) = speed_difference(trace);
    let max_speed_diff = diff.iter().cloned().fold(0.0, f64::max);

    let events = trace.config.leader_profile.events();
    let (amplification_ratios, settle_times) = if events.is_empty() {
        let speeds = trace.speeds(0);
        let baseline = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let end = trace.steps.last().map_or(0.0, |s| s.t + trace.dt());
        (vec![string_stability_ratio(trace, baseline, 0.0, end)], Vec::new())
    } else {
        let ratios = events
            .iter()
            .map(|e| {
                let (t0, t1) = event_window(trace, e);
                string_stability_ratio(trace, e.from, t0, t1)
            })
            .collect();
        let settles = events.iter().map(|e| settle_time(trace, e, SETTLE_BAND)).collect();
        (ratios, settles)
    };

    Ok(MetricsReport {
        mode: trace.mode(),
        p95_error,
        mean_speed_diff,
        max_speed_diff,
        per_vehicle_p95,
        amplification_ratios,
        settle_times,
        min_gap: trace.min_gap(),
        max_abs_accel: trace.inputs().map(|u| u.a.abs()).fold(0.0, f64::max),
        fallback_steps: trace.count_status(crate::mpc::SolveStatus::Fallback),
    })
}
