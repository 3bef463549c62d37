//! Kinematic bicycle model: forward-Euler plant and its affine linearization.
//!
//! The state vector is ordered `[x, y, v, phi]` and the input vector `[a, delta]`.
//! That ordering is the one under which the Jacobian blocks
//!
//! ```text
//!     | 1 0 cos(phi)dt  -v sin(phi)dt |        | 0   0                    |
//! A = | 0 1 sin(phi)dt   v cos(phi)dt |    B = | 0   0                    |
//!     | 0 0 1            0            |        | dt  0                    |
//!     | 0 0 tan(d)/L dt  1            |        | 0   v/(L cos^2(d)) dt    |
//! ```
//!
//! are dimensionally consistent. The affine offset is the first-order Taylor
//! residual `c = f(z, u) - A z - B u`, so the linear model reproduces the
//! nonlinear step exactly at its expansion point.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default vehicle length (m).
pub const VEHICLE_LENGTH: f64 = 4.5;

/// Index of each quantity inside the internal state vector.
pub const IX: usize = 0;
pub const IY: usize = 1;
pub const IV: usize = 2;
pub const IPHI: usize = 3;
/// Index of each quantity inside the input vector.
pub const IA: usize = 0;
pub const IDELTA: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("steering angle {0} rad is at or beyond +/-pi/2; linearization is singular")]
    SingularSteering(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub phi: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, v: f64, phi: f64) -> Self {
        Self { x, y, v, phi }
    }

    /// Straight-road state at longitudinal position `x` moving at `v`.
    pub fn on_lane(x: f64, v: f64) -> Self {
        Self { x, y: 0.0, v, phi: 0.0 }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.v, self.phi)
    }

    pub fn from_vector(z: &Vector4<f64>) -> Self {
        Self { x: z[IX], y: z[IY], v: z[IV], phi: z[IPHI] }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.v.is_finite() && self.phi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration (m/s^2).
    pub a: f64,
    /// Steering angle (rad).
    pub delta: f64,
}

impl ControlInput {
    pub fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.a, self.delta)
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.delta.is_finite()
    }
}

/// Point about which the dynamics are linearized.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OperatingPoint {
    pub v: f64,
    pub phi: f64,
    pub delta: f64,
}

impl OperatingPoint {
    pub fn new(v: f64, phi: f64, delta: f64) -> Self {
        Self { v, phi, delta }
    }

    /// State at the operating point, placed at the origin.
    pub fn state(&self) -> VehicleState {
        VehicleState::new(0.0, 0.0, self.v, self.phi)
    }

    /// Input at the operating point (zero acceleration).
    pub fn input(&self) -> ControlInput {
        ControlInput::new(0.0, self.delta)
    }
}

/// Discrete affine model `z' = A z + B u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub c: Vector4<f64>,
    pub op: OperatingPoint,
    pub dt: f64,
    pub wheelbase: f64,
}

fn check_dt(dt: f64) -> Result<(), ModelError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(ModelError::BadStep(dt))
    }
}

fn check_steering(delta: f64) -> Result<(), ModelError> {
    if delta.abs() < std::f64::consts::FRAC_PI_2 {
        Ok(())
    } else {
        Err(ModelError::SingularSteering(delta))
    }
}

/// One forward-Euler step of the kinematic bicycle with the default length.
pub fn step_nonlinear(
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
) -> Result<VehicleState, ModelError> {
    step_nonlinear_with(state, input, dt, VEHICLE_LENGTH)
}

/// One forward-Euler step. Speed is clamped at zero.
pub fn step_nonlinear_with(
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
    length: f64,
) -> Result<VehicleState, ModelError> {
    if !state.is_finite() {
        return Err(ModelError::NonFinite("state"));
    }
    if !input.is_finite() {
        return Err(ModelError::NonFinite("input"));
    }
    check_dt(dt)?;
    check_steering(input.delta)?;
    let (sin, cos) = state.phi.sin_cos();
    Ok(VehicleState {
        x: state.x + state.v * cos * dt,
        y: state.y + state.v * sin * dt,
        v: (state.v + input.a * dt).max(0.0),
        phi: state.phi + state.v * input.delta.tan() / length * dt,
    })
}

/// Unclamped Euler map `f(z, u)` used for the Taylor residual.
fn euler_map(z: &Vector4<f64>, u: &Vector2<f64>, dt: f64, length: f64) -> Vector4<f64> {
    let (sin, cos) = z[IPHI].sin_cos();
    Vector4::new(
        z[IX] + z[IV] * cos * dt,
        z[IY] + z[IV] * sin * dt,
        z[IV] + u[IA] * dt,
        z[IPHI] + z[IV] * u[IDELTA].tan() / length * dt,
    )
}

pub fn linearize(op: OperatingPoint, dt: f64) -> Result<LinearModel, ModelError> {
    linearize_with(op, dt, VEHICLE_LENGTH)
}

pub fn linearize_with(op: OperatingPoint, dt: f64, length: f64) -> Result<LinearModel, ModelError> {
    if !(op.v.is_finite() && op.phi.is_finite() && op.delta.is_finite()) {
        return Err(ModelError::NonFinite("operating point"));
    }
    check_dt(dt)?;
    check_steering(op.delta)?;
    let (sin, cos) = op.phi.sin_cos();
    let cos_d = op.delta.cos();

    let mut a = Matrix4::identity();
    a[(IX, IV)] = cos * dt;
    a[(IX, IPHI)] = -op.v * sin * dt;
    a[(IY, IV)] = sin * dt;
    a[(IY, IPHI)] = op.v * cos * dt;
    a[(IPHI, IV)] = op.delta.tan() / length * dt;

    let mut b = Matrix4x2::zeros();
    b[(IV, IA)] = dt;
    b[(IPHI, IDELTA)] = op.v / (length * cos_d * cos_d) * dt;

    let z = op.state().to_vector();
    let u = op.input().to_vector();
    let c = euler_map(&z, &u, dt, length) - a * z - b * u;

    Ok(LinearModel { a, b, c, op, dt, wheelbase: length })
}

impl LinearModel {
    /// Model with all-zero matrices; `step` returns `c` for any input.
    pub fn affine_constant(c: Vector4<f64>, dt: f64) -> Self {
        Self {
            a: Matrix4::zeros(),
            b: Matrix4x2::zeros(),
            c,
            op: OperatingPoint::default(),
            dt,
            wheelbase: VEHICLE_LENGTH,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).chain(self.c.iter()).all(|v| v.is_finite())
    }

    pub fn step(&self, state: &VehicleState, input: &ControlInput) -> Result<VehicleState, ModelError> {
        if !self.is_finite() {
            return Err(ModelError::NonFinite("model"));
        }
        let z = self.a * state.to_vector() + self.b * input.to_vector() + self.c;
        Ok(VehicleState::from_vector(&z))
    }
}

/// `A z + B u + c`.
pub fn step_linear(
    model: &LinearModel,
    state: &VehicleState,
    input: &ControlInput,
) -> Result<VehicleState, ModelError> {
    model.step(state, input)
}
