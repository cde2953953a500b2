//! Finite-volume simulation of saturated aggregation-diffusion equations with
//! diagnostics for oscillation decay and energy-estimate checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimates;
pub mod io;
pub mod mesh;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use mesh::{DensityField, FaceField, Grid, Trajectory};
pub use model::{
    EnergyDensity, GridPotentials, Potential, PotentialSpec, SaturationForm, SaturationSpec,
};
pub use solver::{EnergyLedger, InitialCondition, SimulationConfig, Solver};
