//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use platoon_mpc::model::{ControlInput, VehicleState};
use platoon_mpc::mpc::{MpcController, Neighbor};
use platoon_mpc::qp::QpProblem;
use platoon_mpc::sim::SimTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric positive definite matrix with smallest eigenvalue >= `floor`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &r * r.transpose() + DMatrix::identity(n, n) * floor
}

/// Random strictly convex box-constrained problem whose unconstrained
/// minimizer usually violates some bounds.
pub fn random_box_qp(rng: &mut ChaCha8Rng, n: usize) -> QpProblem {
    let h = random_spd(rng, n, 0.5);
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let lb = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..0.0));
    let ub = DVector::from_fn(n, |i, _| lb[i] + rng.gen_range(0.2..1.5));
    QpProblem::new(h, g).with_bounds(lb, ub)
}

/// Brute force over all 3^n assignments of each variable to free, lower or
/// upper. Each assignment fixes the bound variables and solves the reduced
/// unconstrained problem; the best feasible candidate is the minimizer.
pub fn box_qp_enumeration(h: &DMatrix<f64>, g: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + g.dot(x);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..n {
            match c % 3 {
                0 => free.push(i),
                1 => x[i] = lb[i],
                _ => x[i] = ub[i],
            }
            c /= 3;
        }
        if !free.is_empty() {
            let m = free.len();
            let hff = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(m, |a, _| {
                let i = free[a];
                -(g[i] + (0..n).filter(|j| !free.contains(j)).map(|j| h[(i, j)] * x[j]).sum::<f64>())
            });
            let Some(sol) = hff.lu().solve(&rhs) else { continue };
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        let feasible = (0..n).all(|i| x[i] >= lb[i] - 1e-12 && x[i] <= ub[i] + 1e-12);
        if feasible {
            let f = objective(&x);
            if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
    }
    best.expect("box is non-empty").1
}

/// Neighbors a follower saw at `step` of a lossless run: every estimate
/// equals the true state, so they can be rebuilt from the trace alone.
pub fn lossless_neighbors(trace: &SimTrace, step: usize, i: usize, ctl: &MpcController) -> Vec<Neighbor> {
    let s = &trace.steps[step].vehicles;
    let ego = &s[i].state;
    let pred = &s[i - 1].state;
    let radar = platoon_mpc::comms::radar_measure(ego, pred, ctl.vehicle_length);
    let mut out = vec![Neighbor::from_radar(ego, &radar, ctl.vehicle_length, &ctl.horizon)];
    if trace.mode().cooperative() {
        for j in 0..i - 1 {
            let st = &s[j].state;
            out.push(Neighbor::constant_speed(i - j, st.x, st.v, &ctl.horizon));
        }
    }
    out
}

/// Input applied by follower `i` in the step before `step` (zero at the start).
pub fn previous_input(trace: &SimTrace, step: usize, i: usize) -> ControlInput {
    if step == 0 {
        ControlInput::default()
    } else {
        trace.steps[step - 1].vehicles[i].input
    }
}

pub fn state_at(trace: &SimTrace, step: usize, i: usize) -> VehicleState {
    trace.steps[step].vehicles[i].state
}

/// First-order response `v(t) = v_end + (v0 - v_end) exp(-t / tau)` and the
/// time it enters a band of `band` around `v_end` for good.
pub fn exponential_settle(v0: f64, v_end: f64, tau: f64, band: f64) -> f64 {
    tau * ((v0 - v_end).abs() / band).ln()
}

/// Trace with prescribed speeds `speeds[k][i]` and exact gaps, for metric tests.
pub fn synthetic_trace(config: platoon_mpc::sim::ScenarioConfig, speeds: &[Vec<f64>]) -> SimTrace {
    use platoon_mpc::mpc::SolveStatus;
    use platoon_mpc::sim::{StepLog, VehicleLog};
    let steps = speeds
        .iter()
        .enumerate()
        .map(|(k, row)| StepLog {
            step: k,
            t: k as f64 * config.dt,
            vehicles: row
                .iter()
                .enumerate()
                .map(|(i, &v)| VehicleLog {
                    state: VehicleState::on_lane(-(i as f64) * 30.0, v),
                    input: ControlInput::default(),
                    gap: (i > 0).then_some(25.5),
                    desired_gap: (i > 0).then_some(25.5),
                    status: (i > 0).then_some(SolveStatus::Optimal),
                    delivered: vec![true; i],
                    ages: vec![0.0; i],
                })
                .collect(),
        })
        .collect();
    SimTrace { config, steps }
}
