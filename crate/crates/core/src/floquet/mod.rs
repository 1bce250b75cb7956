pub mod linear;
pub mod nonlinear;

pub use linear::{
    asymptotic_current_linear, build_floquet_operator, diagonalize_unitary, floquet_mean_momenta, t0_average_current,
    track_bands, BandSet, CurrentExpansion, FloquetSpectrum, UnitaryEigen,
};
pub use nonlinear::{
    bifurcation_marker, continue_in_g, critical_g, newton_solve, period_map, project_two_state,
    quasienergy_perturbative, quasienergy_two_state, residual, BifurcationMarker, Branch, NewtonOptions,
    NonlinearFloquetState, Orbit, Termination, TwoStateWeights,
};
