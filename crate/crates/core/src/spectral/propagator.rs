//! Strang split-operator integration of
//! `i mu psi_t = [ (p - A(t))^2 / 2 + v0 cos x + g |psi|^2 ] psi`
//! in the truncated plane-wave basis.
//!
//! One step of length `dt` is
//! `W(dt/2) N(dt/2) K(t + dt/2) N(dt/2) W(dt/2)` where
//!
//! * `W` is the exact exponential of the lattice potential restricted to the
//!   basis (a tridiagonal matrix with `v0/2` off the diagonal),
//! * `N` is the exponential of the Galerkin-projected mean-field term
//!   `g P|psi|^2 P` with the density frozen at the start of the sub-step,
//!   summed as a Taylor series until the terms drop below machine precision,
//! * `K` is the diagonal kinetic phase `exp[-i dt (mu n^2 / 2 - n A)]` with `A`
//!   at the midpoint; the `A^2` global phase is dropped.
//!
//! Every factor is unitary on the truncated basis, so the norm is conserved
//! to rounding for any state.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::wavefunction::{momentum_of, SpectralGrid, WaveFunction};
use crate::error::{Error, Result};
use crate::model::{DrivingField, ModelParams};

const NAN_GUARD_INTERVAL: usize = 256;
const TAYLOR_TOL_SQR: f64 = 1e-36;
const TAYLOR_MAX_TERMS: usize = 40;

/// Sampled observables of a propagation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropagationLog {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub momenta: Vec<f64>,
}

impl PropagationLog {
    fn record(&mut self, t: f64, coeffs: &[Complex64], mu: f64) {
        self.times.push(t);
        self.norms.push(coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        self.momenta.push(momentum_of(coeffs, mu));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Per-thread buffers for the mean-field sub-step.
pub struct Workspace {
    grid: Vec<Complex64>,
    fft: Vec<Complex64>,
    density: Vec<f64>,
    tmp: Vec<Complex64>,
    term: Vec<Complex64>,
    next: Vec<Complex64>,
}

/// Integrator for a fixed `(params, field)` pair.
#[derive(Debug, Clone)]
pub struct Propagator {
    params: ModelParams,
    field: DrivingField,
    steps_per_period: usize,
    /// Row-major `W(dt/2)`.
    lattice_half: Vec<Complex64>,
    /// `mu n^2 / 2` per basis index.
    kinetic: Vec<f64>,
    grid: SpectralGrid,
}

impl Propagator {
    pub fn new(params: &ModelParams, field: &DrivingField) -> Result<Self> {
        params.validate()?;
        field.validate()?;
        let steps_per_period = params.steps_per_period(field)?;
        let dim = params.dim();
        let n_max = params.n_max as f64;

        // v0 cos x couples n and n +- 1 with amplitude v0 / 2.
        let mut lattice = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim - 1 {
            lattice[(i, i + 1)] = 0.5 * params.v0;
            lattice[(i + 1, i)] = 0.5 * params.v0;
        }
        let eig = lattice.symmetric_eigen();
        let tau = 0.5 * params.dt / params.mu;
        let mut lattice_half = vec![Complex64::new(0.0, 0.0); dim * dim];
        for k in 0..dim {
            let phase = Complex64::from_polar(1.0, -tau * eig.eigenvalues[k]);
            for i in 0..dim {
                let vik = eig.eigenvectors[(i, k)] * phase;
                for j in 0..dim {
                    lattice_half[i * dim + j] += vik * eig.eigenvectors[(j, k)];
                }
            }
        }

        let kinetic = (0..dim)
            .map(|i| {
                let n = i as f64 - n_max;
                0.5 * params.mu * n * n
            })
            .collect();

        Ok(Propagator {
            params: *params,
            field: *field,
            steps_per_period,
            lattice_half,
            kinetic,
            grid: SpectralGrid::new(params.n_max, SpectralGrid::dealiased_len(params.n_max))?,
        })
    }

    /// Same integrator with a different nonlinearity; `g` enters only the
    /// mean-field factor, so nothing is recomputed.
    pub fn with_g(&self, g: f64) -> Result<Self> {
        if !g.is_finite() {
            return Err(Error::param("g", "must be finite"));
        }
        let mut out = self.clone();
        out.params.g = g;
        Ok(out)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn field(&self) -> &DrivingField {
        &self.field
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn period(&self) -> f64 {
        self.field.period()
    }

    pub fn workspace(&self) -> Workspace {
        let m = self.grid.len();
        let d = self.dim();
        let zero = Complex64::new(0.0, 0.0);
        Workspace {
            grid: vec![zero; m],
            fft: vec![zero; self.grid.scratch_len()],
            density: vec![0.0; m],
            tmp: vec![zero; d],
            term: vec![zero; d],
            next: vec![zero; d],
        }
    }

    /// Advance `psi` by one step from time `t`.
    pub fn step(&self, psi: &WaveFunction, t: f64) -> Result<WaveFunction> {
        self.check_dim(psi)?;
        let mut out = psi.clone();
        let mut ws = self.workspace();
        self.step_in_place(out.coeffs_mut(), t, &mut ws);
        if !out.is_finite() {
            return Err(Error::BlowUp { t, step: 0 });
        }
        Ok(out)
    }

    pub fn step_in_place(&self, c: &mut [Complex64], t: f64, ws: &mut Workspace) {
        let dt = self.params.dt;
        self.apply_lattice_half(c, ws);
        self.apply_mean_field_half(c, ws);
        let a = self.field.vector_potential(t + 0.5 * dt);
        let n_max = self.params.n_max as f64;
        for (i, ci) in c.iter_mut().enumerate() {
            let n = i as f64 - n_max;
            *ci *= Complex64::from_polar(1.0, -dt * (self.kinetic[i] - n * a));
        }
        self.apply_mean_field_half(c, ws);
        self.apply_lattice_half(c, ws);
    }

    fn apply_lattice_half(&self, c: &mut [Complex64], ws: &mut Workspace) {
        if self.params.v0 == 0.0 {
            return;
        }
        let d = c.len();
        for (i, out) in ws.tmp.iter_mut().enumerate() {
            let row = &self.lattice_half[i * d..(i + 1) * d];
            *out = row.iter().zip(c.iter()).map(|(w, x)| w * x).sum();
        }
        c.copy_from_slice(&ws.tmp);
    }

    /// `exp(-i (dt/2) g P rho P / mu)` with `rho = |psi|^2` taken from `c`.
    fn apply_mean_field_half(&self, c: &mut [Complex64], ws: &mut Workspace) {
        let g = self.params.g;
        if g == 0.0 {
            return;
        }
        let Workspace {
            grid,
            fft,
            density,
            term,
            next,
            ..
        } = ws;
        self.grid.to_grid_with(c, grid, fft);
        let scale = g / (TAU * self.params.mu);
        for (rho, u) in density.iter_mut().zip(grid.iter()) {
            *rho = scale * u.norm_sqr();
        }
        let tau = 0.5 * self.params.dt;
        let norm_sqr: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        term.copy_from_slice(c);
        for k in 1..=TAYLOR_MAX_TERMS {
            if k > 1 {
                self.grid.to_grid_with(term, grid, fft);
            }
            for (u, rho) in grid.iter_mut().zip(density.iter()) {
                *u *= *rho;
            }
            self.grid.from_grid_with(grid, next, fft);
            let factor = Complex64::new(0.0, -tau / k as f64);
            let mut size = 0.0;
            for ((t, n), ci) in term.iter_mut().zip(next.iter()).zip(c.iter_mut()) {
                *t = factor * n;
                *ci += *t;
                size += t.norm_sqr();
            }
            if size <= TAYLOR_TOL_SQR * norm_sqr.max(1e-300) {
                break;
            }
        }
    }

    fn check_dim(&self, psi: &WaveFunction) -> Result<()> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: psi.dim(),
            });
        }
        Ok(())
    }

    /// Integer number of steps covering `[t_start, t_end]`.
    pub fn steps_between(&self, t_start: f64, t_end: f64) -> Result<usize> {
        let span = t_end - t_start;
        if !(span > 0.0) {
            return Err(Error::param("t_end", "must exceed t_start"));
        }
        let ratio = span / self.params.dt;
        let steps = ratio.round();
        let defect = (ratio - steps).abs() / ratio;
        if steps < 1.0 || defect > 1e-9 {
            return Err(Error::IncommensurateSpan {
                span,
                dt: self.params.dt,
                defect,
            });
        }
        Ok(steps as usize)
    }

    /// Run `n_steps` steps from `t_start`, calling `observe(k, t_k, c)` for
    /// the initial state (`k = 0`) and after every step.
    pub fn run<F>(&self, psi: &WaveFunction, t_start: f64, n_steps: usize, mut observe: F) -> Result<WaveFunction>
    where
        F: FnMut(usize, f64, &[Complex64]),
    {
        self.check_dim(psi)?;
        let mut state = psi.clone();
        let mut ws = self.workspace();
        let dt = self.params.dt;
        observe(0, t_start, state.coeffs());
        for k in 0..n_steps {
            let t = t_start + k as f64 * dt;
            self.step_in_place(state.coeffs_mut(), t, &mut ws);
            if (k + 1) % NAN_GUARD_INTERVAL == 0 || k + 1 == n_steps {
                if !state.is_finite() {
                    return Err(Error::BlowUp { t: t + dt, step: k + 1 });
                }
            }
            observe(k + 1, t + dt, state.coeffs());
        }
        Ok(state)
    }

    /// Propagate from `t_start` to `t_end`, sampling every `sample_every`
    /// steps (and always at both ends).
    pub fn propagate(
        &self,
        psi: &WaveFunction,
        t_start: f64,
        t_end: f64,
        sample_every: usize,
    ) -> Result<(WaveFunction, PropagationLog)> {
        let n_steps = self.steps_between(t_start, t_end)?;
        let every = sample_every.max(1);
        let mu = self.params.mu;
        let mut log = PropagationLog::default();
        let out = self.run(psi, t_start, n_steps, |k, t, c| {
            if k % every == 0 || k == n_steps {
                log.record(t, c, mu);
            }
        })?;
        Ok((out, log))
    }

    /// Evolve over one period starting at `t0`.
    pub fn evolve_period(&self, psi: &WaveFunction, t0: f64) -> Result<WaveFunction> {
        self.run(psi, t0, self.steps_per_period, |_, _, _| {})
    }

    /// Evolve over one period and return the trapezoidal period average of the
    /// canonical momentum alongside the final state.
    pub fn evolve_period_with_momentum(&self, psi: &WaveFunction, t0: f64) -> Result<(WaveFunction, f64)> {
        let n = self.steps_per_period;
        let mu = self.params.mu;
        let mut acc = 0.0;
        let out = self.run(psi, t0, n, |k, _, c| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * momentum_of(c, mu);
        })?;
        Ok((out, acc / n as f64))
    }

    /// Sample `samples + 1` equally spaced states over one period (first and
    /// last included). `steps_per_period` must be a multiple of `samples`.
    pub fn sample_period(&self, psi: &WaveFunction, t0: f64, samples: usize) -> Result<Vec<WaveFunction>> {
        let n = self.steps_per_period;
        if samples == 0 || n % samples != 0 {
            return Err(Error::param(
                "samples",
                format!("{samples} does not divide {n} steps per period"),
            ));
        }
        let stride = n / samples;
        let mut out = Vec::with_capacity(samples + 1);
        self.run(psi, t0, n, |k, _, c| {
            if k % stride == 0 {
                out.push(WaveFunction::from_coeffs(c.to_vec()).expect("valid dimension"));
            }
        })?;
        Ok(out)
    }
}
