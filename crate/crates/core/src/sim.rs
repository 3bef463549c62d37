//! Synchronous, time-stepped simulation of a vehicle string.
//!
//! Each step runs, in order: beaconing, per-link delivery draws, estimator
//! and radar updates, follower MPC solves against the step's snapshot, the
//! leader's open-loop profile input, and plant propagation. Follower solves
//! read only the snapshot, so they run in parallel and are merged in vehicle
//! order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{
    radar_measure, Bsm, ChannelConfig, CommsError, HoldModel, NeighborEstimate, Topology,
};
use crate::model::{step_nonlinear_with, ControlInput, ModelError, VehicleState, VEHICLE_LENGTH};
use crate::mpc::{
    HorizonPlan, Mode, MpcBounds, MpcController, MpcError, MpcWeights, Neighbor, SolveStatus,
    SpacingPolicy,
};

/// Leader actuation limit (m/s^2), independent of the followers' bounds.
pub const LEADER_ACCEL_LIMIT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("collision at step {step} (t = {t:.1} s): vehicle {vehicle} gap {gap:.3} m")]
    Collision { step: usize, t: f64, vehicle: usize, gap: f64 },
    #[error("vehicle {vehicle} at step {step}: {source}")]
    Control { step: usize, vehicle: usize, source: MpcError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Comms(#[from] CommsError),
}

/// Speed reference driven by the leader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderProfile {
    Constant {
        speed: f64,
    },
    /// Hold `initial`, ramp to `low`, hold, ramp to `high`, hold.
    StepTest {
        #[serde(default = "defaults::initial")]
        initial: f64,
        #[serde(default = "defaults::low")]
        low: f64,
        #[serde(default = "defaults::high")]
        high: f64,
        #[serde(default = "defaults::decel_start")]
        decel_start: f64,
        #[serde(default = "defaults::accel_start")]
        accel_start: f64,
        #[serde(default = "defaults::ramp_rate")]
        ramp_rate: f64,
    },
    /// `mid + amp cos(2 pi t / period)`, starting at the maximum.
    TimeVarying {
        #[serde(default = "defaults::tv_min")]
        min: f64,
        #[serde(default = "defaults::tv_max")]
        max: f64,
        #[serde(default = "defaults::period")]
        period: f64,
    },
}

mod defaults {
    pub fn initial() -> f64 {
        20.0
    }
    pub fn low() -> f64 {
        15.0
    }
    pub fn high() -> f64 {
        25.0
    }
    pub fn decel_start() -> f64 {
        10.0
    }
    pub fn accel_start() -> f64 {
        60.0
    }
    pub fn ramp_rate() -> f64 {
        1.0
    }
    pub fn tv_min() -> f64 {
        10.0
    }
    pub fn tv_max() -> f64 {
        20.0
    }
    pub fn period() -> f64 {
        60.0
    }
}

/// A leader speed change from one setpoint to another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderEvent {
    /// Ramp start (s).
    pub start: f64,
    /// Time the leader reaches `to` (s).
    pub end: f64,
    pub from: f64,
    pub to: f64,
}

fn ramp(t: f64, t0: f64, from: f64, to: f64, rate: f64) -> f64 {
    if t <= t0 {
        from
    } else {
        let dv = rate * (t - t0);
        if to >= from {
            (from + dv).min(to)
        } else {
            (from - dv).max(to)
        }
    }
}

impl LeaderProfile {
    pub fn step_test() -> Self {
        LeaderProfile::StepTest {
            initial: defaults::initial(),
            low: defaults::low(),
            high: defaults::high(),
            decel_start: defaults::decel_start(),
            accel_start: defaults::accel_start(),
            ramp_rate: defaults::ramp_rate(),
        }
    }

    pub fn time_varying() -> Self {
        LeaderProfile::TimeVarying {
            min: defaults::tv_min(),
            max: defaults::tv_max(),
            period: defaults::period(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("leader_profile: {m}")));
        match *self {
            LeaderProfile::Constant { speed } if !(speed >= 0.0 && speed.is_finite()) => {
                bad("speed must be finite and >= 0")
            }
            LeaderProfile::StepTest { initial, low, high, decel_start, accel_start, ramp_rate } => {
                if [initial, low, high].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("speeds must be finite and >= 0");
                }
                if !(ramp_rate > 0.0) {
                    return bad("ramp_rate must be > 0");
                }
                let decel_end = decel_start + (initial - low).abs() / ramp_rate;
                if !(decel_start >= 0.0 && accel_start >= decel_end) {
                    return bad("second ramp must start after the first one ends");
                }
                Ok(())
            }
            LeaderProfile::TimeVarying { min, max, period } => {
                if !(min >= 0.0 && max >= min && max.is_finite()) {
                    return bad("need 0 <= min <= max");
                }
                if !(period > 0.0 && period.is_finite()) {
                    return bad("period must be > 0");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn speed(&self, t: f64) -> f64 {
        match *self {
            LeaderProfile::Constant { speed } => speed,
            LeaderProfile::StepTest { initial, low, high, decel_start, accel_start, ramp_rate } => {
                if t < accel_start {
                    ramp(t, decel_start, initial, low, ramp_rate)
                } else {
                    ramp(t, accel_start, low, high, ramp_rate)
                }
            }
            LeaderProfile::TimeVarying { min, max, period } => {
                let mid = 0.5 * (min + max);
                let amp = 0.5 * (max - min);
                mid + amp * (std::f64::consts::TAU * t / period).cos()
            }
        }
    }

    pub fn initial_speed(&self) -> f64 {
        self.speed(0.0)
    }

    /// Discrete setpoint changes, in time order. Empty for smooth profiles.
    pub fn events(&self) -> Vec<LeaderEvent> {
        match *self {
            LeaderProfile::StepTest { initial, low, high, decel_start, accel_start, ramp_rate } => {
                vec![
                    LeaderEvent {
                        start: decel_start,
                        end: decel_start + (initial - low).abs() / ramp_rate,
                        from: initial,
                        to: low,
                    },
                    LeaderEvent {
                        start: accel_start,
                        end: accel_start + (high - low).abs() / ramp_rate,
                        from: low,
                        to: high,
                    },
                ]
            }
            _ => Vec::new(),
        }
    }
}

pub fn leader_speed(profile: &LeaderProfile, t: f64) -> Result<f64, SimError> {
    if !(t >= 0.0) {
        return Err(SimError::Config(format!("time must be >= 0, got {t}")));
    }
    profile.validate()?;
    Ok(profile.speed(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_vehicles: usize,
    pub mode: Mode,
    pub per: f64,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
    pub leader_profile: LeaderProfile,
    /// Gap parameters; the mode is taken from `mode`.
    pub policy: SpacingPolicy,
    pub weights: MpcWeights,
    pub bounds: MpcBounds,
    pub horizon: HorizonPlan,
    pub vehicle_length: f64,
    pub estimator: HoldModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 15,
            mode: Mode::Cacc,
            per: 0.0,
            seed: 0,
            duration: 120.0,
            dt: 0.1,
            leader_profile: LeaderProfile::step_test(),
            policy: SpacingPolicy::default(),
            weights: MpcWeights::default(),
            bounds: MpcBounds::default(),
            horizon: HorizonPlan::default(),
            vehicle_length: VEHICLE_LENGTH,
            estimator: HoldModel::ConstantSpeed,
        }
    }
}

impl ScenarioConfig {
    pub fn spacing(&self) -> SpacingPolicy {
        SpacingPolicy { mode: self.mode, ..self.policy }
    }

    pub fn controller(&self) -> MpcController {
        let mut ctl = MpcController::new(self.spacing(), self.weights, self.bounds, self.horizon);
        ctl.vehicle_length = self.vehicle_length;
        ctl
    }

    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig { per: self.per, seed: self.seed }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_vehicles < 2 {
            return bad(format!("n_vehicles must be >= 2, got {}", self.n_vehicles));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if (self.horizon.dt - self.dt).abs() > 1e-12 {
            return bad(format!("horizon.dt ({}) must equal dt ({})", self.horizon.dt, self.dt));
        }
        if !(self.vehicle_length > 0.0) {
            return bad(format!("vehicle_length must be > 0, got {}", self.vehicle_length));
        }
        self.channel().validate().map_err(|e| SimError::Config(format!("per: {e}")))?;
        self.leader_profile.validate()?;
        self.controller().validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One vehicle at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleLog {
    pub state: VehicleState,
    pub input: ControlInput,
    /// Bumper-to-bumper distance to the predecessor; `None` for the leader.
    pub gap: Option<f64>,
    pub desired_gap: Option<f64>,
    /// `None` for the leader, which does not solve.
    pub status: Option<SolveStatus>,
    /// Delivery flag of the beacon from each vehicle `j < i` at this step.
    pub delivered: Vec<bool>,
    /// Estimator age for each vehicle `j < i` after this step's update.
    pub ages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    pub vehicles: Vec<VehicleLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub config: ScenarioConfig,
    pub steps: Vec<StepLog>,
}

impl SimTrace {
    pub fn n_vehicles(&self) -> usize {
        self.config.n_vehicles
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.t)
    }

    /// Speed series of vehicle `i`.
    pub fn speeds(&self, i: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.vehicles[i].state.v).collect()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ControlInput> + '_ {
        self.steps.iter().flat_map(|s| s.vehicles.iter().map(|v| &v.input))
    }

    pub fn min_gap(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.vehicles.iter().filter_map(|v| v.gap))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn count_status(&self, status: SolveStatus) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.vehicles)
            .filter(|v| v.status == Some(status))
            .count()
    }
}

/// Initial string: single file at the desired gaps, all at the leader's speed.
pub fn initialize(
    config: &ScenarioConfig,
) -> Result<(Vec<VehicleState>, Vec<Vec<NeighborEstimate>>), SimError> {
    config.validate()?;
    let v0 = config.leader_profile.initial_speed();
    let spacing = config.spacing();
    let pitch = spacing.desired_gap(v0, 1).map_err(|e| SimError::Config(e.to_string()))?
        + config.vehicle_length;
    let states: Vec<VehicleState> =
        (0..config.n_vehicles).map(|i| VehicleState::on_lane(0.0 - i as f64 * pitch, v0)).collect();
    let estimators = (0..config.n_vehicles)
        .map(|i| {
            (0..i)
                .map(|j| NeighborEstimate::fresh(Bsm::from_state(j, 0.0, &states[j], 0.0)))
                .collect()
        })
        .collect();
    Ok((states, estimators))
}

struct FollowerStep {
    outcome: crate::mpc::ControlOutcome,
}

pub fn run(config: &ScenarioConfig) -> Result<SimTrace, SimError> {
    let (mut states, mut estimators) = initialize(config)?;
    let n = config.n_vehicles;
    let dt = config.dt;
    let topology = Topology::aplf(n)?;
    let channel = config.channel();
    let controller = config.controller();
    let spacing = config.spacing();
    let horizon = config.horizon;
    let length = config.vehicle_length;
    let profile = config.leader_profile;
    let mut inputs = vec![ControlInput::default(); n];
    let n_steps = config.steps();
    let mut steps = Vec::with_capacity(n_steps);

    for step in 0..n_steps {
        let t = step as f64 * dt;

        // Beacons and delivery. The initial estimators stand in for step 0's beacons.
        let beacons: Vec<Bsm> =
            (0..n).map(|j| Bsm::from_state(j, t, &states[j], inputs[j].a)).collect();
        let mut delivered: Vec<Vec<bool>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut flags = Vec::with_capacity(i);
            for j in topology.v2v_neighbors(i)? {
                let ok = step == 0 || channel.delivered(step as u64, j, i);
                if step > 0 {
                    let incoming = ok.then_some(&beacons[j]);
                    estimators[i][j] = estimators[i][j].update(incoming, dt, config.estimator)?;
                }
                flags.push(ok);
            }
            delivered.push(flags);
        }

        // Follower controls from the snapshot.
        let snapshot = &states;
        let prev = &inputs;
        let ests = &estimators;
        let followers: Vec<Result<FollowerStep, SimError>> = (1..n)
            .into_par_iter()
            .map(|i| {
                let ego = &snapshot[i];
                let radar = radar_measure(ego, &snapshot[i - 1], length);
                let mut neighbors = vec![Neighbor::from_radar(ego, &radar, length, &horizon)];
                if config.mode.cooperative() {
                    neighbors.extend(ests[i].iter().take(i - 1).enumerate().map(|(j, est)| {
                        Neighbor::constant_speed(i - j, est.est_x, est.est_v, &horizon)
                    }));
                }
                let outcome = controller
                    .compute_control(ego, &prev[i], &neighbors)
                    .map_err(|source| SimError::Control { step, vehicle: i, source })?;
                Ok(FollowerStep { outcome })
            })
            .collect();

        let mut vehicles = Vec::with_capacity(n);
        let v_next = profile.speed(t + dt);
        let leader_a = ((v_next - profile.speed(t)) / dt).clamp(-LEADER_ACCEL_LIMIT, LEADER_ACCEL_LIMIT);
        let mut new_inputs = vec![ControlInput::new(leader_a, 0.0)];
        vehicles.push(VehicleLog {
            state: states[0],
            input: new_inputs[0],
            gap: None,
            desired_gap: None,
            status: None,
            delivered: Vec::new(),
            ages: Vec::new(),
        });
        for (k, res) in followers.into_iter().enumerate() {
            let i = k + 1;
            let FollowerStep { outcome } = res?;
            let gap = states[i - 1].x - states[i].x - length;
            let desired = spacing
                .desired_gap(states[i].v, 1)
                .map_err(|source| SimError::Control { step, vehicle: i, source })?;
            new_inputs.push(outcome.input);
            vehicles.push(VehicleLog {
                state: states[i],
                input: outcome.input,
                gap: Some(gap),
                desired_gap: Some(desired),
                status: Some(outcome.status),
                delivered: std::mem::take(&mut delivered[i]),
                ages: estimators[i].iter().map(|e| e.age).collect(),
            });
        }
        steps.push(StepLog { step, t, vehicles });

        for (s, u) in states.iter_mut().zip(&new_inputs) {
            *s = step_nonlinear_with(s, u, dt, length)?;
        }
        inputs = new_inputs;

        for i in 1..n {
            let gap = states[i - 1].x - states[i].x - length;
            if gap < 0.0 {
                return Err(SimError::Collision { step: step + 1, t: t + dt, vehicle: i, gap });
            }
        }
    }

    Ok(SimTrace { config: config.clone(), steps })
}
