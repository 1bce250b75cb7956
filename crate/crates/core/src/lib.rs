//! Directed transport of a driven Bose-Einstein condensate in a periodic
//! potential: linear and nonlinear Floquet states of the driven
//! Gross-Pitaevskii equation, their continuation in the interaction
//! strength, the two-mode dimer, and current diagnostics.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dimer;
pub mod error;
pub mod exec;
pub mod floquet;
pub mod model;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
pub use model::{DrivingField, ModelParams, PhysicalDrive, PhysicalParams};
pub use spectral::{mean_momentum, PropagationLog, Propagator, StateRecord, WaveFunction};
