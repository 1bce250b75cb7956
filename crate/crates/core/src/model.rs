//! Driving field, dimensionless model constants and the conversion from
//! laboratory units.
//!
//! The lattice problem is written in the gauge where the force enters the
//! kinetic term through the vector potential `A(t)`, with `dA/dt = -E(t)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant in SI units.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Default number of integrator steps per driving period.
pub const DEFAULT_STEPS_PER_PERIOD: usize = 1024;

/// Two-harmonic ac force `E(t) = E1 cos[w(t-t0)] + E2 cos[2w(t-t0) + theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingField {
    #[serde(rename = "E1", alias = "e1")]
    pub e1: f64,
    #[serde(rename = "E2", alias = "e2")]
    pub e2: f64,
    pub omega: f64,
    /// Relative phase, stored unreduced.
    pub theta: f64,
    #[serde(default)]
    pub t0: f64,
}

impl DrivingField {
    pub fn new(e1: f64, e2: f64, omega: f64, theta: f64, t0: f64) -> Result<Self> {
        let field = DrivingField {
            e1,
            e2,
            omega,
            theta,
            t0,
        };
        field.validate()?;
        Ok(field)
    }

    /// The drive used throughout the lattice study: `E1 = 3.26`, `w = 3`.
    pub fn lattice_reference(e2: f64, theta: f64) -> Self {
        DrivingField {
            e1: 3.26,
            e2,
            omega: 3.0,
            theta,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::param("omega", format!("must be positive, got {}", self.omega)));
        }
        for (name, v) in [("E1", self.e1), ("E2", self.e2), ("theta", self.theta), ("t0", self.t0)] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    pub fn with_theta(self, theta: f64) -> Self {
        DrivingField { theta, ..self }
    }

    pub fn with_t0(self, t0: f64) -> Self {
        DrivingField { t0, ..self }
    }

    pub fn with_e2(self, e2: f64) -> Self {
        DrivingField { e2, ..self }
    }

    /// `E(t)`.
    pub fn force(&self, t: f64) -> f64 {
        let s = self.omega * (t - self.t0);
        self.e1 * s.cos() + self.e2 * (2.0 * s + self.theta).cos()
    }

    /// `A(t) = -E1 sin[w(t-t0)]/w - E2 sin[2w(t-t0) + theta]/(2w)`.
    pub fn vector_potential(&self, t: f64) -> f64 {
        let s = self.omega * (t - self.t0);
        -self.e1 * s.sin() / self.omega - self.e2 * (2.0 * s + self.theta).sin() / (2.0 * self.omega)
    }

    /// `E(t) = -E(t + T/2)` for all `t`. For two harmonics this holds exactly
    /// when the second harmonic is absent.
    pub fn is_shift_symmetric(&self) -> bool {
        self.e2.abs() <= 1e-12 * self.e1.abs().max(1.0)
    }

    /// `E(t0 + s) = E(t0 - s)` for all `s`, i.e. `sin(theta) = 0` (or the second
    /// harmonic is absent).
    pub fn is_time_reversal_symmetric(&self) -> bool {
        if self.e2 == 0.0 {
            return true;
        }
        let reduced = self.theta.rem_euclid(TAU);
        reduced.sin().abs() < 1e-12
    }
}

/// Dimensionless constants of the Gross-Pitaevskii problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Effective Planck constant.
    pub mu: f64,
    #[serde(default = "default_v0")]
    pub v0: f64,
    #[serde(default)]
    pub g: f64,
    /// Plane-wave cutoff `N`; the basis is `n = -N..=N`.
    pub n_max: usize,
    pub dt: f64,
}

fn default_v0() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(mu: f64, v0: f64, g: f64, n_max: usize, dt: f64) -> Result<Self> {
        let p = ModelParams { mu, v0, g, n_max, dt };
        p.validate()?;
        Ok(p)
    }

    /// Parameters whose step divides the field period into `steps` pieces.
    pub fn for_field(mu: f64, v0: f64, g: f64, n_max: usize, field: &DrivingField, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("dt", "steps per period must be positive"));
        }
        Self::new(mu, v0, g, n_max, field.period() / steps as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::param("mu", format!("must be positive, got {}", self.mu)));
        }
        if !self.v0.is_finite() {
            return Err(Error::param("v0", "must be finite"));
        }
        if !self.g.is_finite() {
            return Err(Error::param("g", "must be finite"));
        }
        if self.n_max < 1 {
            return Err(Error::param("n_max", "must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn with_g(self, g: f64) -> Self {
        ModelParams { g, ..self }
    }

    pub fn with_n_max(self, n_max: usize) -> Self {
        ModelParams { n_max, ..self }
    }

    /// Basis dimension `2N + 1`.
    pub fn dim(&self) -> usize {
        2 * self.n_max + 1
    }

    /// Number of steps in one period; fails unless `dt` divides `T` to one
    /// part in `1e12`.
    pub fn steps_per_period(&self, field: &DrivingField) -> Result<usize> {
        let period = field.period();
        let ratio = period / self.dt;
        let steps = ratio.round();
        let defect = (steps * self.dt - period).abs();
        if steps < 1.0 || defect > 1e-12 * period {
            return Err(Error::IncommensurateSpan {
                span: period,
                dt: self.dt,
                defect,
            });
        }
        Ok(steps as usize)
    }
}

/// Laboratory parameters of the condensate in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub atomic_mass: f64,
    pub lattice_wavenumber: f64,
    pub lattice_depth: f64,
    /// s-wave scattering length; zero switches interactions off.
    pub scattering_length: f64,
    pub mean_density: f64,
    /// Unit of time `t_s` used to make the equation dimensionless.
    pub time_scale: f64,
}

/// Laboratory drive: force amplitudes (N), angular frequency (rad/s),
/// relative phase and initial time (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalDrive {
    pub force1: f64,
    pub force2: f64,
    pub omega: f64,
    pub theta: f64,
    pub t0: f64,
}

/// Dimensionless rescaling of the laboratory equation with `x = 2 k_L X` and
/// `t = tau / t_s`.
pub fn rescale_physical(
    phys: &PhysicalParams,
    drive: &PhysicalDrive,
    n_max: usize,
    steps_per_period: usize,
) -> Result<(ModelParams, DrivingField)> {
    let positive = [
        ("atomic_mass", phys.atomic_mass),
        ("lattice_wavenumber", phys.lattice_wavenumber),
        ("lattice_depth", phys.lattice_depth),
        ("mean_density", phys.mean_density),
        ("time_scale", phys.time_scale),
        ("omega", drive.omega),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    if !(phys.scattering_length.is_finite() && phys.scattering_length >= 0.0) {
        return Err(Error::param("scattering_length", "must be nonnegative"));
    }
    for (name, v) in [
        ("force1", drive.force1),
        ("force2", drive.force2),
        ("theta", drive.theta),
        ("t0", drive.t0),
    ] {
        if !v.is_finite() {
            return Err(Error::param(name, "must be finite"));
        }
    }

    let m = phys.atomic_mass;
    let kl = phys.lattice_wavenumber;
    let mu = 4.0 * HBAR * kl * kl * phys.time_scale / m;
    let v0 = mu * mu * m * phys.lattice_depth / (4.0 * HBAR * HBAR * kl * kl);
    let force_scale = mu * mu * m / (8.0 * HBAR * HBAR * kl.powi(3));
    let coupling = PI * phys.mean_density * phys.scattering_length / (kl * kl);
    let g = mu * mu * coupling;

    let field = DrivingField::new(
        force_scale * drive.force1,
        force_scale * drive.force2,
        drive.omega * phys.time_scale,
        drive.theta,
        drive.t0 / phys.time_scale,
    )?;
    let params = ModelParams::for_field(mu, v0, g, n_max, &field, steps_per_period)?;
    Ok((params, field))
}
