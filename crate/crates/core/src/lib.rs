pub mod model;
pub mod qp;
pub mod mpc;
pub mod comms;
pub mod metrics;
pub mod sim;
pub mod io;
pub mod experiment;
