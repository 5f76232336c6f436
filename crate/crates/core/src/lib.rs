//! Volt-VAR toolkit for radial distribution feeders: branch-flow power flow,
//! conic optimal power flow, and regression-fitted local inverter control.

pub mod conic;
pub mod control;
pub mod error;
pub mod feeder;
pub mod opf;
pub mod powerflow;
pub mod regression;
pub mod report;
pub mod scenario;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
