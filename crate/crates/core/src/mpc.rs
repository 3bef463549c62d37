//! Finite-horizon MPC for longitudinal following in ACC, CACC and platooning modes.
//!
//! Decision variables are the stacked inputs `U = [a_0, delta_0, ..., a_{T-1}, delta_{T-1}]`.
//! Ego states are eliminated by forward substitution through the per-cycle
//! [`LinearModel`], so every predicted quantity is affine in `U`:
//!
//! ```text
//! z_k = F_k + Gamma_k U,   F_k = A F_{k-1} + c,   Gamma_k = A Gamma_{k-1} + B e_{k-1}
//! ```
//!
//! Each neighbor contributes, for every horizon step, a weighted squared gap
//! error and a weighted squared relative speed. The radar predecessor also
//! carries the hard no-collision row.

use nalgebra::{DMatrix, DVector, Matrix4xX};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    linearize_with, ControlInput, ModelError, OperatingPoint, VehicleState, IA, IDELTA, IPHI, IV,
    IX, IY, VEHICLE_LENGTH,
};
use crate::qp::{self, QpError, QpProblem, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid neighbor: hops must be at least 1")]
    InvalidNeighbor,
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Acc,
    Cacc,
    Platooning,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Acc, Mode::Cacc, Mode::Platooning];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Acc => "acc",
            Mode::Cacc => "cacc",
            Mode::Platooning => "platooning",
        }
    }

    /// Whether the controller uses V2V information beyond the radar.
    pub fn cooperative(&self) -> bool {
        !matches!(self, Mode::Acc)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "acc" => Ok(Mode::Acc),
            "cacc" => Ok(Mode::Cacc),
            "platooning" | "platoon" => Ok(Mode::Platooning),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpacingPolicy {
    pub mode: Mode,
    /// Constant time headway (s), used by ACC and CACC.
    pub t_gap: f64,
    /// Constant clearance (m), used by platooning.
    pub d_const: f64,
    /// Standstill margin (m).
    pub d_safety: f64,
}

impl Default for SpacingPolicy {
    fn default() -> Self {
        Self { mode: Mode::Cacc, t_gap: 0.8, d_const: 15.0, d_safety: 0.0 }
    }
}

impl SpacingPolicy {
    pub fn for_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::Config(m.to_string()));
        if !(self.d_safety >= 0.0 && self.d_safety.is_finite()) {
            return bad("d_safety must be finite and >= 0");
        }
        match self.mode {
            Mode::Acc | Mode::Cacc if !(self.t_gap > 0.0 && self.t_gap.is_finite()) => {
                bad("t_gap must be > 0")
            }
            Mode::Platooning if !(self.d_const > 0.0 && self.d_const.is_finite()) => {
                bad("d_const must be > 0")
            }
            _ => Ok(()),
        }
    }

    /// Desired bumper-to-bumper distance to a neighbor `hops` positions ahead.
    pub fn desired_gap(&self, v_ego: f64, hops: usize) -> Result<f64, MpcError> {
        if hops == 0 {
            return Err(MpcError::InvalidNeighbor);
        }
        let h = hops as f64;
        Ok(match self.mode {
            Mode::Acc | Mode::Cacc => h * (self.d_safety + self.t_gap * v_ego),
            Mode::Platooning => h * self.d_const,
        })
    }

    /// Speed-independent part and speed coefficient of the desired gap.
    fn gap_terms(&self, hops: usize) -> (f64, f64) {
        let h = hops as f64;
        match self.mode {
            Mode::Acc | Mode::Cacc => (h * self.d_safety, h * self.t_gap),
            Mode::Platooning => (h * self.d_const, 0.0),
        }
    }
}

pub fn desired_gap(policy: &SpacingPolicy, v_ego: f64, hops: usize) -> Result<f64, MpcError> {
    policy.desired_gap(v_ego, hops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcWeights {
    /// Per-state weights `[x, y, v, phi]` on deviation from the current lane-keeping motion.
    pub q_ego: [f64; 4],
    /// Input magnitude weights `[a, delta]`.
    pub r_u: [f64; 2],
    /// Input rate weights `[a, delta]`.
    pub r_du: [f64; 2],
    /// `[gap error, relative speed]`, shared by every neighbor.
    pub q_rel: [f64; 2],
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self { q_ego: [0.0; 4], r_u: [0.1, 0.1], r_du: [0.5, 0.5], q_rel: [1.0, 0.5] }
    }
}

impl MpcWeights {
    pub fn scaled(&self, k: f64) -> Self {
        let s = |w: &[f64]| w.iter().map(|x| x * k).collect::<Vec<_>>();
        Self {
            q_ego: s(&self.q_ego).try_into().unwrap(),
            r_u: s(&self.r_u).try_into().unwrap(),
            r_du: s(&self.r_du).try_into().unwrap(),
            q_rel: s(&self.q_rel).try_into().unwrap(),
        }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let all = self.q_ego.iter().chain(&self.r_u).chain(&self.r_du).chain(&self.q_rel);
        if all.clone().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(MpcError::Config("weights must be finite and >= 0".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcBounds {
    pub a_max: f64,
    pub a_min: f64,
    pub delta_max: f64,
    /// Steering change per step (rad).
    pub ddelta_max: f64,
    /// Acceleration change per step (m/s^2).
    pub da_max: f64,
    pub v_max: f64,
    pub v_min: f64,
}

impl Default for MpcBounds {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            a_min: -1.0,
            delta_max: 0.5,
            ddelta_max: 0.05,
            da_max: 0.5,
            v_max: 40.0,
            v_min: 0.0,
        }
    }
}

impl MpcBounds {
    pub fn validate(&self) -> Result<(), MpcError> {
        let ok = self.a_min <= 0.0
            && self.a_max >= 0.0
            && self.delta_max >= 0.0
            && self.delta_max < std::f64::consts::FRAC_PI_2
            && self.ddelta_max >= 0.0
            && self.da_max >= 0.0
            && self.v_min <= self.v_max
            && [self.a_min, self.a_max, self.delta_max, self.ddelta_max, self.da_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MpcError::Config(format!("inconsistent bounds {self:?}")))
        }
    }
}

/// Distance covered under forward Euler from speed `v`, starting with
/// acceleration `a` and ramping down by `da` per step to `a_brake < 0`.
fn braking_distance(v: f64, a: f64, a_brake: f64, da: f64, dt: f64) -> f64 {
    let (mut v, mut a, mut dist) = (v, a, 0.0);
    while v > 0.0 {
        dist += v * dt;
        v = (v + a * dt).max(0.0);
        a = (a - da).max(a_brake);
    }
    dist
}

/// Current `(x, v)` of a constant-speed neighbor track.
fn radar_origin(nb: &Neighbor, dt: f64) -> (f64, f64) {
    let (x1, v) = nb.trajectory[0];
    (x1 - v * dt, v)
}

/// Radar measurement of the immediate predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeState {
    /// Bumper-to-bumper distance (m).
    pub gap: f64,
    /// `v_pred - v_ego` (m/s).
    pub rel_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonPlan {
    pub steps: usize,
    pub dt: f64,
}

impl Default for HorizonPlan {
    fn default() -> Self {
        Self { steps: 10, dt: 0.1 }
    }
}

/// Predicted longitudinal motion of one neighbor over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// String positions between the neighbor and the ego vehicle (1 = predecessor).
    pub hops: usize,
    /// `(x, v)` at horizon steps `1..=T`.
    pub trajectory: Vec<(f64, f64)>,
}

impl Neighbor {
    /// Constant-speed extrapolation from `(x, v)` at the current instant.
    pub fn constant_speed(hops: usize, x: f64, v: f64, horizon: &HorizonPlan) -> Self {
        let trajectory = (1..=horizon.steps)
            .map(|k| (x + v * k as f64 * horizon.dt, v))
            .collect();
        Self { hops, trajectory }
    }

    /// Predecessor as seen by the radar.
    pub fn from_radar(
        ego: &VehicleState,
        radar: &RelativeState,
        vehicle_length: f64,
        horizon: &HorizonPlan,
    ) -> Self {
        let x = ego.x + radar.gap + vehicle_length;
        Self::constant_speed(1, x, ego.v + radar.rel_speed, horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    /// QP infeasible; maximal (rate-limited) braking applied.
    Fallback,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub input: ControlInput,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcController {
    pub policy: SpacingPolicy,
    pub weights: MpcWeights,
    pub bounds: MpcBounds,
    pub horizon: HorizonPlan,
    pub vehicle_length: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Accumulates `sum w * (e0 + row' U)^2` into `1/2 U' H U + g' U`.
struct CostBuilder {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl CostBuilder {
    fn new(n: usize) -> Self {
        Self { h: DMatrix::zeros(n, n), g: DVector::zeros(n) }
    }

    fn add_square(&mut self, w: f64, e0: f64, row: &DVector<f64>) {
        if w == 0.0 {
            return;
        }
        self.h.ger(2.0 * w, row, row, 1.0);
        self.g.axpy(2.0 * w * e0, row, 1.0);
    }
}

/// Affine ego prediction over the horizon.
struct Prediction {
    /// `F_k` for `k = 1..=T`.
    free: Vec<[f64; 4]>,
    /// `Gamma_k` for `k = 1..=T`.
    forced: Vec<Matrix4xX<f64>>,
}

impl Prediction {
    fn row(&self, k: usize, state: usize) -> DVector<f64> {
        self.forced[k].row(state).transpose()
    }
}

impl MpcController {
    pub fn new(policy: SpacingPolicy, weights: MpcWeights, bounds: MpcBounds, horizon: HorizonPlan) -> Self {
        Self {
            policy,
            weights,
            bounds,
            horizon,
            vehicle_length: VEHICLE_LENGTH,
            tol: qp::DEFAULT_TOL,
            max_iter: qp::DEFAULT_MAX_ITER,
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        Self::new(
            SpacingPolicy::for_mode(mode),
            MpcWeights::default(),
            MpcBounds::default(),
            HorizonPlan::default(),
        )
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        self.policy.validate()?;
        self.weights.validate()?;
        self.bounds.validate()?;
        if self.horizon.steps == 0 || !(self.horizon.dt > 0.0) {
            return Err(MpcError::Config("horizon needs at least one step and dt > 0".into()));
        }
        Ok(())
    }

    fn decision_len(&self) -> usize {
        2 * self.horizon.steps
    }

    fn predict(&self, ego: &VehicleState, prev: &ControlInput) -> Result<Prediction, MpcError> {
        let op = OperatingPoint::new(ego.v, ego.phi, prev.delta);
        let model = linearize_with(op, self.horizon.dt, self.vehicle_length)?;
        let n = self.decision_len();
        let mut free = Vec::with_capacity(self.horizon.steps);
        let mut forced = Vec::with_capacity(self.horizon.steps);
        let mut f = ego.to_vector();
        let mut gamma = Matrix4xX::zeros(n);
        for k in 0..self.horizon.steps {
            f = model.a * f + model.c;
            gamma = model.a * gamma;
            gamma.column_mut(2 * k).axpy(1.0, &model.b.column(IA), 1.0);
            gamma.column_mut(2 * k + 1).axpy(1.0, &model.b.column(IDELTA), 1.0);
            free.push([f[0], f[1], f[2], f[3]]);
            forced.push(gamma.clone());
        }
        Ok(Prediction { free, forced })
    }

    fn check_neighbors(&self, neighbors: &[Neighbor]) -> Result<(), MpcError> {
        if neighbors.is_empty() {
            return Err(MpcError::Config("follower has no neighbors".into()));
        }
        if neighbors.iter().any(|nb| nb.hops == 0) {
            return Err(MpcError::InvalidNeighbor);
        }
        if neighbors.iter().any(|nb| nb.trajectory.len() != self.horizon.steps) {
            return Err(MpcError::Config("neighbor trajectory length differs from horizon".into()));
        }
        if self.policy.mode == Mode::Acc && (neighbors.len() != 1 || neighbors[0].hops != 1) {
            return Err(MpcError::Config("ACC uses only the radar predecessor".into()));
        }
        Ok(())
    }

    pub fn build_problem(
        &self,
        ego: &VehicleState,
        prev: &ControlInput,
        neighbors: &[Neighbor],
    ) -> Result<QpProblem, MpcError> {
        self.check_neighbors(neighbors)?;
        let steps = self.horizon.steps;
        let n = self.decision_len();
        let pred = self.predict(ego, prev)?;
        let w = &self.weights;
        let mut cost = CostBuilder::new(n);

        for nb in neighbors {
            let (gap_const, gap_per_speed) = self.policy.gap_terms(nb.hops);
            let lengths = nb.hops as f64 * self.vehicle_length;
            for (k, &(xj, vj)) in nb.trajectory.iter().enumerate() {
                let fk = &pred.free[k];
                let row_x = pred.row(k, IX);
                let row_v = pred.row(k, IV);
                // gap - desired = xj - x - h L - const - tg h v
                let e0 = xj - fk[IX] - lengths - gap_const - gap_per_speed * fk[IV];
                let row = -(row_x + row_v.clone() * gap_per_speed);
                cost.add_square(w.q_rel[0], e0, &row);
                cost.add_square(w.q_rel[1], vj - fk[IV], &(-row_v));
            }
        }

        if w.q_ego.iter().any(|q| *q > 0.0) {
            for k in 0..steps {
                let t = (k + 1) as f64 * self.horizon.dt;
                let reference = [ego.x + ego.v * t, 0.0, ego.v, 0.0];
                for s in [IX, IY, IV, IPHI] {
                    let e0 = pred.free[k][s] - reference[s];
                    cost.add_square(w.q_ego[s], e0, &pred.row(k, s));
                }
            }
        }

        let prev_u = [prev.a, prev.delta];
        for k in 0..steps {
            for c in 0..2 {
                let mut e = DVector::zeros(n);
                e[2 * k + c] = 1.0;
                cost.add_square(w.r_u[c], 0.0, &e);
                if k == 0 {
                    cost.add_square(w.r_du[c], -prev_u[c], &e);
                } else {
                    e[2 * (k - 1) + c] = -1.0;
                    cost.add_square(w.r_du[c], 0.0, &e);
                }
            }
        }

        // Input boxes; the first-step rate limit folds into the first box.
        let b = &self.bounds;
        let mut lb = DVector::zeros(n);
        let mut ub = DVector::zeros(n);
        for k in 0..steps {
            lb[2 * k] = b.a_min;
            ub[2 * k] = b.a_max;
            lb[2 * k + 1] = -b.delta_max;
            ub[2 * k + 1] = b.delta_max;
        }
        lb[0] = lb[0].max(prev.a - b.da_max);
        ub[0] = ub[0].min(prev.a + b.da_max);
        lb[1] = lb[1].max(prev.delta - b.ddelta_max);
        ub[1] = ub[1].min(prev.delta + b.ddelta_max);

        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let mut push = |row: DVector<f64>, r: f64| {
            if row.amax() > 0.0 {
                rows.push(row);
                rhs.push(r);
            }
        };

        for k in 1..steps {
            for (c, limit) in [(0, b.da_max), (1, b.ddelta_max)] {
                let mut e = DVector::zeros(n);
                e[2 * k + c] = 1.0;
                e[2 * (k - 1) + c] = -1.0;
                push(e.clone(), limit);
                push(-e, limit);
            }
        }
        for k in 0..steps {
            let row_v = pred.row(k, IV);
            let fv = pred.free[k][IV];
            if b.v_max.is_finite() {
                push(row_v.clone(), b.v_max - fv);
            }
            if b.v_min.is_finite() {
                push(-row_v, fv - b.v_min);
            }
        }
        if let Some(radar) = neighbors.iter().find(|nb| nb.hops == 1) {
            // Predecessor assumed to brake at the limit from its current state.
            let (x0, v0) = radar_origin(radar, self.horizon.dt);
            let brake = -b.a_min;
            for k in 0..steps {
                let t = (k + 1) as f64 * self.horizon.dt;
                let tau = if brake > 0.0 { t.min(v0 / brake) } else { t };
                let xp = x0 + v0 * tau - 0.5 * brake * tau * tau;
                // x_k <= x_pred,k - L - d_safety
                let limit = xp - self.vehicle_length - self.policy.d_safety - pred.free[k][IX];
                push(pred.row(k, IX), limit);
            }
            // Backup maneuver: after the first input the ego can switch to
            // rate-limited full braking and stop behind where the predecessor
            // stops if it brakes now. Only a0 enters; the stopping distance is
            // bounded above by a line over the first-step box.
            if brake > 0.0 && b.da_max > 0.0 {
                let dt = self.horizon.dt;
                let pred_stop = x0 + braking_distance(v0, -brake, -brake, b.da_max, dt);
                let room = pred_stop - self.vehicle_length - self.policy.d_safety - ego.x;
                let (lo, hi) = (lb[0], ub[0]);
                let dist = |a0: f64| braking_distance(ego.v.max(0.0), a0, -brake, b.da_max, dt);
                let d_lo = dist(lo);
                let slope = if hi > lo { (dist(hi) - d_lo) / (hi - lo) } else { 0.0 };
                let slack = (0..=16)
                    .map(|j| lo + (hi - lo) * j as f64 / 16.0)
                    .map(|a| dist(a) - d_lo - slope * (a - lo))
                    .fold(0.0, f64::max);
                let mut row = DVector::zeros(n);
                row[0] = slope;
                push(row, room - d_lo + slope * lo - slack);
            }
        }

        let mut ineq = DMatrix::zeros(rows.len(), n);
        for (i, row) in rows.iter().enumerate() {
            ineq.set_row(i, &row.transpose());
        }
        Ok(QpProblem::new(cost.h, cost.g)
            .with_bounds(lb, ub)
            .with_inequalities(ineq, DVector::from_vec(rhs)))
    }

    /// Solves the horizon problem and returns the first input.
    pub fn compute_control(
        &self,
        ego: &VehicleState,
        prev: &ControlInput,
        neighbors: &[Neighbor],
    ) -> Result<ControlOutcome, MpcError> {
        let problem = self.build_problem(ego, prev, neighbors)?;
        let sol = qp::solve(&problem, self.tol, self.max_iter)?;
        let b = &self.bounds;
        let status = match sol.status {
            QpStatus::Optimal => SolveStatus::Optimal,
            QpStatus::MaxIter => SolveStatus::MaxIter,
            QpStatus::Infeasible => SolveStatus::Fallback,
        };
        let input = if status == SolveStatus::Fallback {
            ControlInput::new((prev.a - b.da_max).max(b.a_min), 0.0)
        } else {
            ControlInput::new(
                sol.x[0].clamp(b.a_min, b.a_max),
                sol.x[1].clamp(-b.delta_max, b.delta_max),
            )
        };
        Ok(ControlOutcome {
            input,
            status,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        })
    }
}
