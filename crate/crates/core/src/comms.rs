//! V2V beaconing over an i.i.d. packet-erasure channel, plus the radar link.
//!
//! Every vehicle broadcasts a [`Bsm`] each step. Delivery is decided per
//! directed link and per beacon by a draw keyed on `(seed, step, sender,
//! receiver)`, so any subset of draws can be evaluated in any order and still
//! reproduce the same pattern. Receivers keep one [`NeighborEstimate`] per
//! sender and extrapolate across losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::VehicleState;
use crate::mpc::RelativeState;

/// Beacon period (s).
pub const BEACON_PERIOD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommsError {
    #[error("packet error rate {0} outside [0, 1]")]
    BadPer(f64),
    #[error("vehicle {index} out of range for a string of {n}")]
    OutOfRange { index: usize, n: usize },
    #[error("topology needs at least two vehicles, got {0}")]
    TooFewVehicles(usize),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

/// Basic safety message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bsm {
    pub sender: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub phi: f64,
}

impl Bsm {
    pub fn from_state(sender: usize, t: f64, state: &VehicleState, a: f64) -> Self {
        Self { sender, t, x: state.x, y: state.y, v: state.v, a, phi: state.phi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Packet error rate: probability a beacon is lost on a link.
    pub per: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(per: f64, seed: u64) -> Result<Self, CommsError> {
        let cfg = Self { per, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CommsError> {
        if (0.0..=1.0).contains(&self.per) {
            Ok(())
        } else {
            Err(CommsError::BadPer(self.per))
        }
    }

    /// Uniform draw in `[0, 1)` for one beacon on one directed link.
    pub fn draw(&self, step: u64, sender: usize, receiver: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((sender as u64) << 32) | receiver as u64);
        rng.set_word_pos(u128::from(step) * 2);
        rng.gen::<f64>()
    }

    pub fn delivered(&self, step: u64, sender: usize, receiver: usize) -> bool {
        self.draw(step, sender, receiver) >= self.per
    }
}

/// Decides whether `bsm` reaches `receiver` at `step`.
pub fn transmit(bsm: &Bsm, receiver: usize, cfg: &ChannelConfig, step: u64) -> bool {
    cfg.delivered(step, bsm.sender, receiver)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldModel {
    /// Position extrapolated at the last received speed; speed held.
    #[default]
    ConstantSpeed,
    /// Also extrapolates with the last received acceleration.
    ConstantAcceleration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEstimate {
    pub last: Bsm,
    /// Seconds since `last` was received.
    pub age: f64,
    pub est_x: f64,
    pub est_v: f64,
}

impl NeighborEstimate {
    /// Estimate seeded with a packet received just now.
    pub fn fresh(bsm: Bsm) -> Self {
        Self { last: bsm, age: 0.0, est_x: bsm.x, est_v: bsm.v }
    }

    pub fn update(
        &self,
        incoming: Option<&Bsm>,
        dt: f64,
        hold: HoldModel,
    ) -> Result<Self, CommsError> {
        if !(dt > 0.0) {
            return Err(CommsError::BadStep(dt));
        }
        if let Some(bsm) = incoming {
            return Ok(Self::fresh(*bsm));
        }
        let age = self.age + dt;
        let last = self.last;
        let (est_x, est_v) = match hold {
            HoldModel::ConstantSpeed => (last.x + last.v * age, last.v),
            HoldModel::ConstantAcceleration => {
                // Stop extrapolating once the held speed reaches zero.
                let stop = if last.a < 0.0 { -last.v / last.a } else { f64::INFINITY };
                let tau = age.min(stop);
                (last.x + last.v * tau + 0.5 * last.a * tau * tau, (last.v + last.a * tau).max(0.0))
            }
        };
        Ok(Self { last, age, est_x, est_v })
    }
}

/// Constant-speed hold update.
pub fn update_estimate(
    est: &NeighborEstimate,
    incoming: Option<&Bsm>,
    dt: f64,
) -> Result<NeighborEstimate, CommsError> {
    est.update(incoming, dt, HoldModel::ConstantSpeed)
}

/// All-predecessor-leader-following topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    n: usize,
}

impl Topology {
    pub fn aplf(n: usize) -> Result<Self, CommsError> {
        if n < 2 {
            return Err(CommsError::TooFewVehicles(n));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Vehicles whose beacons `i` listens to.
    pub fn v2v_neighbors(&self, i: usize) -> Result<Vec<usize>, CommsError> {
        if i >= self.n {
            return Err(CommsError::OutOfRange { index: i, n: self.n });
        }
        Ok((0..i).collect())
    }
}

pub fn v2v_neighbors(topology: &Topology, i: usize) -> Result<Vec<usize>, CommsError> {
    topology.v2v_neighbors(i)
}

/// Noiseless range and range-rate to the immediate predecessor.
pub fn radar_measure(ego: &VehicleState, predecessor: &VehicleState, vehicle_length: f64) -> RelativeState {
    RelativeState {
        gap: predecessor.x - ego.x - vehicle_length,
        rel_speed: predecessor.v - ego.v,
    }
}
