//! Linearize the kinematic bicycle about an operating point and compare the
//! affine model with the nonlinear step as the state moves away from it.
//!
//! ```bash
//! cargo run --release --example bicycle_linearization
//! ```

use platoon_mpc::model::{linearize, step_linear, step_nonlinear, ControlInput, OperatingPoint, VehicleState};

fn main() -> anyhow::Result<()> {
    let op = OperatingPoint::new(15.0, 0.1, 0.05);
    let m = linearize(op, 0.1)?;
    println!("A =\n{}", m.a);
    println!("B =\n{}", m.b);
    println!("C = {}", m.c.transpose());

    let u = ControlInput::new(0.5, 0.05);
    for dv in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let z = VehicleState::new(0.0, 0.0, 15.0 + dv, 0.1 + dv * 0.02);
        let lin = step_linear(&m, &z, &u)?;
        let non = step_nonlinear(&z, &u, 0.1)?;
        println!("dv {dv:>3.1}: one-step error {:.3e}", (lin.to_vector() - non.to_vector()).norm());
    }
    Ok(())
}
