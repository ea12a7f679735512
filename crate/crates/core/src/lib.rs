//! Dynamical diffusion swarms: a discrete sample model of single-particle
//! quantum dynamics, its continuum limit, a reference Schrödinger solver and
//! the tools to compare them.

pub mod continuum;
pub mod fields;
pub mod harness;
pub mod observables;
pub mod phase;
pub mod quantum;
pub mod rng;
pub mod swarm;
pub mod units;

pub use fields::{DensityField, ImpulseField, Potential, VelocityField};
pub use units::{Boundary, ConfigFile, GridSpec, PhysicalConfig, ValidatedConfig};
