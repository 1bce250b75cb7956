//! Plane-wave representation of the condensate and the split-operator
//! integrator.

mod io;
mod propagator;
mod wavefunction;

pub use io::StateRecord;
pub use propagator::{PropagationLog, Propagator, Workspace};
pub(crate) use wavefunction::momentum_of;
pub use wavefunction::{mean_momentum, SpectralGrid, WaveFunction};
