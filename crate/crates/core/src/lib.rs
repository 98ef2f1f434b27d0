//! Relay-assisted cognitive OFDMA downlink: channel and sensing models,
//! per-hop schedulers, baselines and Monte Carlo sweeps.

pub mod analysis;
pub mod baselines;
pub mod channel;
pub mod cli;
pub mod error;
pub mod goodput_curve;
pub mod scenario;
pub mod scheduler;
pub mod sensing;
pub mod solver_bs;
pub mod solver_rs;

pub use error::{Error, Result};
