//! Quasiperiodic kicked rotor simulation and finite-time scaling analysis.

pub mod anderson;
pub mod classical;
pub mod error;
pub mod harness;
pub mod model;
pub mod observables;
pub mod optimize;
pub mod quantum;
pub mod scaling;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    caesium_gravity_drift, kick_strength, physical_to_scaled, PhysicalParams, RotorParams,
    SweepPath,
};
