//! Volunteer edge-cloud scheduling engine and discrete-event simulator.

pub mod artifact;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod enclave;
pub mod error;
pub mod fleet;
pub mod forecast;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod time;

pub use error::{Error, Result};
