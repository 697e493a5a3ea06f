//! Simulation and optimization of clock transitions in a continuously driven
//! double-lambda three-level system.

pub mod analysis;
pub mod dynamics;
pub mod exec;
pub mod experiment;
pub mod hamiltonian;
pub mod linalg;
pub mod noise;
pub mod optimizer;
pub mod spectrum;
pub mod units;
