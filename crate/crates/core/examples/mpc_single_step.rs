//! One receding-horizon solve for a CACC follower that is 3 m too close to
//! its predecessor, with a second neighbor known over V2V. In the second case
//! the follower is also closing at 3 m/s: it could not stop in time if the
//! predecessor braked now, so the QP is infeasible and the follower brakes.
//!
//! ```bash
//! cargo run --release --example mpc_single_step
//! ```

use platoon_mpc::model::{ControlInput, VehicleState, VEHICLE_LENGTH};
use platoon_mpc::mpc::{Mode, MpcController, Neighbor};

fn main() -> anyhow::Result<()> {
    let ctl = MpcController::for_mode(Mode::Cacc);
    let ego = VehicleState::on_lane(0.0, 20.0);
    let desired = ctl.policy.desired_gap(ego.v, 1)?;
    println!("desired gap at {} m/s: {desired:.2} m", ego.v);

    for pred_v in [20.0, 17.0] {
        let pred_x = ego.x + VEHICLE_LENGTH + desired - 3.0;
        let neighbors = [
            Neighbor::constant_speed(1, pred_x, pred_v, &ctl.horizon),
            Neighbor::constant_speed(2, pred_x + VEHICLE_LENGTH + desired, pred_v, &ctl.horizon),
        ];
        let problem = ctl.build_problem(&ego, &ControlInput::default(), &neighbors)?;
        let out = ctl.compute_control(&ego, &ControlInput::default(), &neighbors)?;
        println!(
            "predecessor at {pred_v} m/s: {} variables, {} rows -> a = {:.4} m/s^2, delta = {:.4} rad ({}, {} iterations)",
            problem.dim(),
            problem.ineq.nrows(),
            out.input.a,
            out.input.delta,
            out.status.as_str(),
            out.iterations,
        );
    }
    Ok(())
}
