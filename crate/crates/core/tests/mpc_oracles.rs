mod common;

use nalgebra::DVector;
use platoon_mpc::model::{ControlInput, VehicleState};
use platoon_mpc::mpc::{
    HorizonPlan, Mode, MpcBounds, MpcController, MpcError, MpcWeights, Neighbor, SolveStatus, SpacingPolicy,
};
use platoon_mpc::qp;

fn controller(mode: Mode, steps: usize) -> MpcController {
    MpcController::new(
        SpacingPolicy::for_mode(mode),
        MpcWeights::default(),
        MpcBounds::default(),
        HorizonPlan { steps, dt: 0.1 },
    )
}

/// Neighbors `1..=k` ahead, each at the exact desired spacing, all at speed `v`.
fn string_ahead(ctl: &MpcController, ego: &VehicleState, k: usize) -> Vec<Neighbor> {
    (1..=k)
        .map(|h| {
            let gap = ctl.policy.desired_gap(ego.v, h).unwrap();
            Neighbor::constant_speed(h, ego.x + gap + h as f64 * ctl.vehicle_length, ego.v, &ctl.horizon)
        })
        .collect()
}

#[test]
fn equilibrium_has_zero_gradient() {
    for mode in Mode::ALL {
        let ctl = controller(mode, 10);
        let ego = VehicleState::on_lane(0.0, 20.0);
        let k = if mode == Mode::Acc { 1 } else { 4 };
        let nbs = string_ahead(&ctl, &ego, k);
        let p = ctl.build_problem(&ego, &ControlInput::default(), &nbs).unwrap();
        assert!(p.gradient.amax() < 1e-9, "{mode}: {}", p.gradient.amax());
        let out = ctl.compute_control(&ego, &ControlInput::default(), &nbs).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.input.a.abs() < 1e-9 && out.input.delta.abs() < 1e-9);
    }
}

/// With a one-step horizon the problem is separable in `a` and `delta`, and
/// each coordinate minimizes a scalar quadratic.
#[test]
fn one_step_horizon_matches_closed_form() {
    for (mode, tg) in [(Mode::Cacc, 0.8), (Mode::Platooning, 0.0)] {
        let mut ctl = controller(mode, 1);
        ctl.weights = MpcWeights { q_rel: [50.0, 2.0], r_u: [0.3, 0.2], r_du: [0.7, 0.4], q_ego: [0.0; 4] };
        let dt = 0.1;
        let ego = VehicleState::on_lane(0.0, 18.0);
        let prev = ControlInput::new(0.2, 0.01);
        let (xj, vj) = (ego.x + 17.0 + 4.5, 18.3);
        let nb = Neighbor::constant_speed(1, xj, vj, &ctl.horizon);
        let out = ctl.compute_control(&ego, &prev, &[nb]).unwrap();

        let w = ctl.weights;
        let desired_const = if mode == Mode::Platooning { 15.0 } else { 0.0 };
        let e0 = (xj + vj * dt) - (ego.x + ego.v * dt) - 4.5 - desired_const - tg * ego.v;
        let num = w.q_rel[0] * tg * dt * e0 + w.q_rel[1] * dt * (vj - ego.v) + w.r_du[0] * prev.a;
        let den = w.q_rel[0] * (tg * dt).powi(2) + w.q_rel[1] * dt * dt + w.r_u[0] + w.r_du[0];
        let a = (num / den).clamp(prev.a - 0.5, prev.a + 0.5).clamp(-1.0, 1.0);
        let delta = w.r_du[1] * prev.delta / (w.r_u[1] + w.r_du[1]);
        assert!((out.input.a - a).abs() < 1e-8, "{mode}: {} vs {a}", out.input.a);
        assert!((out.input.delta - delta).abs() < 1e-8);
        assert!(out.kkt_residual <= 1e-6);
    }
}

#[test]
fn grid_search_agrees_with_solver() {
    let ctl = controller(Mode::Cacc, 2);
    let ego = VehicleState::on_lane(0.0, 20.0);
    for (gap_offset, sign) in [(3.0, 1.0), (-3.0, -1.0)] {
        let mut nbs = string_ahead(&ctl, &ego, 1);
        nbs[0] = Neighbor::constant_speed(1, nbs[0].trajectory[0].0 - 2.0 + gap_offset, 20.0, &ctl.horizon);
        let prev = ControlInput::default();
        let p = ctl.build_problem(&ego, &prev, &nbs).unwrap();
        let sol = qp::solve_default(&p).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        let grid: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.05).collect();
        for &a0 in &grid {
            for &a1 in &grid {
                let x = DVector::from_vec(vec![a0, 0.0, a1, 0.0]);
                if p.max_violation(&x) <= 0.0 {
                    let f = p.objective(&x);
                    if f < best.0 {
                        best = (f, a0);
                    }
                }
            }
        }
        assert!(sol.objective <= best.0 + 1e-9);
        assert_eq!(sol.x[0].signum(), sign);
        assert_eq!(best.1.signum(), sign);
    }
}

#[test]
fn scaling_all_weights_leaves_control_unchanged() {
    let ctl = controller(Mode::Platooning, 10);
    let ego = VehicleState::on_lane(0.0, 19.0);
    let nbs: Vec<Neighbor> =
        (1..=3).map(|h| Neighbor::constant_speed(h, h as f64 * 20.0 + 1.0, 20.0, &ctl.horizon)).collect();
    let prev = ControlInput::new(0.3, 0.0);
    let base = ctl.compute_control(&ego, &prev, &nbs).unwrap().input;
    for k in [0.1, 3.0, 40.0] {
        let scaled = MpcController { weights: ctl.weights.scaled(k), ..ctl.clone() };
        let u = scaled.compute_control(&ego, &prev, &nbs).unwrap().input;
        assert!((u.a - base.a).abs() < 1e-6, "k = {k}");
        assert!((u.delta - base.delta).abs() < 1e-6);
    }
}

#[test]
fn input_and_rate_limits_hold() {
    let ctl = controller(Mode::Cacc, 10);
    let ego = VehicleState::on_lane(0.0, 20.0);
    let prev = ControlInput::new(0.0, 0.0);
    // Predecessor far ahead: the controller wants to accelerate hard.
    let far = Neighbor::constant_speed(1, 200.0, 30.0, &ctl.horizon);
    let u = ctl.compute_control(&ego, &prev, &[far]).unwrap().input;
    assert!((u.a - 0.5).abs() < 1e-9, "rate-limited to da_max, got {}", u.a);
}

#[test]
fn neighbor_errors() {
    let ctl = controller(Mode::Acc, 10);
    let ego = VehicleState::on_lane(0.0, 20.0);
    let bad = Neighbor::constant_speed(0, 10.0, 20.0, &ctl.horizon);
    assert!(matches!(ctl.compute_control(&ego, &ControlInput::default(), &[bad]), Err(MpcError::InvalidNeighbor)));
    assert!(matches!(ctl.compute_control(&ego, &ControlInput::default(), &[]), Err(MpcError::Config(_))));
    let two = string_ahead(&ctl, &ego, 2);
    assert!(ctl.compute_control(&ego, &ControlInput::default(), &two).is_err());
}

#[test]
fn imminent_collision_brakes() {
    let ctl = controller(Mode::Acc, 10);
    let ego = VehicleState::on_lane(0.0, 20.0);
    let prev = ControlInput::new(-1.0, 0.0);
    let stopped = Neighbor::constant_speed(1, 4.5 + 3.0, 0.0, &ctl.horizon);
    let out = ctl.compute_control(&ego, &prev, &[stopped]).unwrap();
    assert_eq!(out.input.a, -1.0);
}
