//! Semiclassical Monte Carlo simulation of cavity cooling of a single
//! two-level atom held in an intracavity far-red-detuned dipole trap.

pub mod analysis;
pub mod cqed;
pub mod dynamics;
pub mod mechanics;
pub mod oracle;
pub mod params;
pub mod protocols;
pub mod schedule;

pub use cqed::{CavityModel, DriveSettings, FieldAtomState, Position};
pub use params::{derive, load_params, DerivedParams, ExperimentParams};
