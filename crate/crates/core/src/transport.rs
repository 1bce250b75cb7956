//! Direct-simulation currents: running average momentum and parameter scans.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{DrivingField, ModelParams};
use crate::spectral::momentum_of;
use crate::spectral::{Propagator, WaveFunction};

pub const DEFAULT_PERIODS: usize = 4096;
pub const DEFAULT_PLATEAU_TOL: f64 = 0.05;
pub const MIN_PERIODS: usize = 64;
/// Floor on |P| in the relative plateau test.
pub const PLATEAU_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentEstimate {
    /// Running average momentum at the end of the run.
    pub value: f64,
    /// P at `total_periods / 2^k`, for `k = m, ..., 1, 0` (earliest first,
    /// last entry equals `value`).
    pub window_values: Vec<f64>,
    pub converged: bool,
    pub total_periods: usize,
}

impl CurrentEstimate {
    /// P at half the run length.
    pub fn half_value(&self) -> f64 {
        let n = self.window_values.len();
        if n >= 2 {
            self.window_values[n - 2]
        } else {
            self.value
        }
    }
}

pub fn plateau_reached(p_end: f64, p_half: f64, tol: f64) -> bool {
    (p_end - p_half).abs() < tol * p_end.abs().max(PLATEAU_FLOOR)
}

/// Integrate `initial` for `n_periods` from `t0` and return the running
/// average `P = (1/(t - t0)) ∫ <p> dt`, trapezoidal on the step grid.
pub fn running_average_momentum(
    initial: &WaveFunction,
    t0: f64,
    n_periods: usize,
    prop: &Propagator,
    plateau_tol: f64,
) -> Result<CurrentEstimate> {
    running_average_until_plateau(initial, t0, n_periods, n_periods, prop, plateau_tol)
}

/// As [`running_average_momentum`], but keeps integrating, doubling the run
/// length from `min_periods` up to `max_periods`, until the plateau test
/// passes.
pub fn running_average_until_plateau(
    initial: &WaveFunction,
    t0: f64,
    min_periods: usize,
    max_periods: usize,
    prop: &Propagator,
    plateau_tol: f64,
) -> Result<CurrentEstimate> {
    if min_periods < MIN_PERIODS {
        return Err(Error::param("n_periods", format!("{min_periods} < {MIN_PERIODS}")));
    }
    if max_periods < min_periods {
        return Err(Error::param("max_periods", "must be at least n_periods"));
    }
    if (initial.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::param("initial", "must be normalized"));
    }
    let spp = prop.steps_per_period();
    let mu = prop.params().mu;
    let dt = prop.params().dt;

    let mut m = min_periods;
    let mut first = Vec::new();
    while m % 2 == 0 && m / 2 >= MIN_PERIODS / 2 {
        m /= 2;
        first.push(m);
    }
    first.reverse();
    first.push(min_periods);

    let mut state = initial.clone();
    let mut integral = 0.0;
    let mut prev = momentum_of(initial.coeffs(), mu);
    let mut done = 0usize;
    let mut windows: Vec<f64> = Vec::new();
    let mut advance = |state: &mut WaveFunction, to: usize, integral: &mut f64, prev: &mut f64| -> Result<()> {
        let steps = (to - done) * spp;
        let t_start = t0 + (done * spp) as f64 * dt;
        *state = prop.run(state, t_start, steps, |k, _, c| {
            if k > 0 {
                let p = momentum_of(c, mu);
                *integral += 0.5 * (p + *prev);
                *prev = p;
            }
        })?;
        done = to;
        Ok(())
    };
    for &n in &first {
        advance(&mut state, n, &mut integral, &mut prev)?;
        windows.push(integral / (n * spp) as f64);
    }
    let mut total = min_periods;
    loop {
        let value = *windows.last().expect("at least one window");
        let half = if windows.len() >= 2 {
            windows[windows.len() - 2]
        } else {
            value
        };
        let converged = plateau_reached(value, half, plateau_tol);
        if converged || 2 * total > max_periods {
            return Ok(CurrentEstimate {
                value,
                window_values: windows,
                converged,
                total_periods: total,
            });
        }
        total *= 2;
        advance(&mut state, total, &mut integral, &mut prev)?;
        windows.push(integral / (total * spp) as f64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanAxis {
    Theta,
    G,
    T0,
}

impl ScanAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanAxis::Theta => "theta",
            ScanAxis::G => "g",
            ScanAxis::T0 => "t0",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanSpec {
    pub axis: ScanAxis,
    pub grid: Vec<f64>,
    pub params: ModelParams,
    pub field: DrivingField,
    pub initial: WaveFunction,
    pub n_periods: usize,
    /// Upper bound for plateau doubling; equal to `n_periods` for fixed runs.
    pub max_periods: usize,
    pub plateau_tol: f64,
}

#[derive(Debug, Clone)]
pub struct ScanRow {
    pub index: usize,
    pub value: f64,
    pub estimate: std::result::Result<CurrentEstimate, String>,
    pub wall_time: f64,
}

/// `t0` grid of `n` equally spaced points in `[0, T)`.
pub fn t0_grid(period: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| period * k as f64 / n as f64).collect()
}

fn scan_point(spec: &ScanSpec, value: f64) -> Result<CurrentEstimate> {
    // A t0 scan moves the start time against a fixed drive.
    let (params, field, start) = match spec.axis {
        ScanAxis::Theta => (spec.params.clone(), spec.field.with_theta(value), spec.field.t0),
        ScanAxis::G => (spec.params.clone().with_g(value), spec.field, spec.field.t0),
        ScanAxis::T0 => (spec.params.clone(), spec.field, spec.field.t0 + value),
    };
    let prop = Propagator::new(&params, &field)?;
    running_average_until_plateau(
        &spec.initial,
        start,
        spec.n_periods,
        spec.max_periods.max(spec.n_periods),
        &prop,
        spec.plateau_tol,
    )
}

/// Run the scan, skipping the first `skip` grid points. Points are computed
/// in parallel batches; `sink` sees rows in grid order as each batch
/// completes. Per-point failures are recorded, not raised.
pub fn scan<F>(spec: &ScanSpec, skip: usize, mut sink: F) -> Result<Vec<ScanRow>>
where
    F: FnMut(&ScanRow) -> Result<()>,
{
    if spec.grid.is_empty() {
        return Err(Error::param("grid", "must be nonempty"));
    }
    let batch = exec::workers().max(1);
    let mut rows = Vec::with_capacity(spec.grid.len().saturating_sub(skip));
    let mut start = skip.min(spec.grid.len());
    while start < spec.grid.len() {
        let end = (start + batch).min(spec.grid.len());
        let done = exec::map_range(end - start, |i| {
            let index = start + i;
            let value = spec.grid[index];
            let clock = Instant::now();
            let estimate = scan_point(spec, value).map_err(|e| e.to_string());
            ScanRow {
                index,
                value,
                estimate,
                wall_time: clock.elapsed().as_secs_f64(),
            }
        });
        for row in done {
            if let Err(e) = &row.estimate {
                log::warn!("{} = {}: {e}", spec.axis.as_str(), row.value);
            }
            sink(&row)?;
            rows.push(row);
        }
        start = end;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{asymptotic_current_linear, FloquetSpectrum};

    fn small(v0: f64, g: f64, theta: f64) -> (ModelParams, DrivingField) {
        let field = DrivingField::lattice_reference(1.2, theta);
        let params = ModelParams::for_field(0.2, v0, g, 8, &field, 256).unwrap();
        (params, field)
    }

    #[test]
    fn free_particle_current_is_initial_momentum() {
        let (params, field) = small(0.0, 0.0, -1.0);
        let prop = Propagator::new(&params, &field).unwrap();
        let psi = WaveFunction::plane_wave(2, 8).unwrap().combine(
            num_complex::Complex64::new(0.6, 0.0),
            &WaveFunction::plane_wave(-1, 8).unwrap(),
            num_complex::Complex64::new(0.0, 0.8),
        );
        let est = running_average_momentum(&psi, 0.0, 64, &prop, DEFAULT_PLATEAU_TOL).unwrap();
        let p0 = crate::mean_momentum(&psi, 0.2);
        assert!((est.value - p0).abs() < 1e-12, "{} vs {p0}", est.value);
        assert!(est.converged);
        assert_eq!(est.window_values.len(), 2);
    }

    #[test]
    fn windows_are_dyadic() {
        let (params, field) = small(1.0, 0.0, -1.0);
        let prop = Propagator::new(&params, &field).unwrap();
        let psi = WaveFunction::plane_wave(0, 8).unwrap();
        let est = running_average_momentum(&psi, 0.0, 256, &prop, DEFAULT_PLATEAU_TOL).unwrap();
        // 32, 64, 128, 256
        assert_eq!(est.window_values.len(), 4);
        assert_eq!(*est.window_values.last().unwrap(), est.value);
        assert_eq!(
            est.converged,
            plateau_reached(est.value, est.half_value(), DEFAULT_PLATEAU_TOL)
        );
    }

    #[test]
    fn rejects_short_runs_and_unnormalized_states() {
        let (params, field) = small(1.0, 0.0, 0.0);
        let prop = Propagator::new(&params, &field).unwrap();
        let psi = WaveFunction::plane_wave(0, 8).unwrap();
        assert!(running_average_momentum(&psi, 0.0, 32, &prop, 0.05).is_err());
        let big = psi.clone().scaled(num_complex::Complex64::new(2.0, 0.0));
        assert!(running_average_momentum(&big, 0.0, 64, &prop, 0.05).is_err());
    }

    #[test]
    fn doubling_continues_the_same_trajectory() {
        let (params, field) = small(1.0, 0.0, -1.0);
        let prop = Propagator::new(&params, &field).unwrap();
        let psi = WaveFunction::plane_wave(0, 8).unwrap();
        let grown = running_average_until_plateau(&psi, 0.0, 64, 256, &prop, 1e-9).unwrap();
        assert_eq!(grown.total_periods, 256);
        assert!(!grown.converged);
        let fresh = running_average_momentum(&psi, 0.0, 256, &prop, 1e-9).unwrap();
        assert_eq!(grown.window_values.len(), fresh.window_values.len());
        for (a, b) in grown.window_values.iter().zip(&fresh.window_values) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let loose = running_average_until_plateau(&psi, 0.0, 64, 256, &prop, 10.0).unwrap();
        assert_eq!(loose.total_periods, 64);
        assert!(loose.converged);
    }

    #[test]
    fn plateau_floor_applies_near_zero() {
        assert!(plateau_reached(1e-4, 3e-4, 0.05));
        assert!(!plateau_reached(1.0, 0.9, 0.05));
        assert!(plateau_reached(1.0, 0.96, 0.05));
    }

    #[test]
    fn long_run_approaches_floquet_expansion() {
        let (params, field) = small(1.0, 0.0, -1.0);
        let prop = Propagator::new(&params, &field).unwrap();
        let psi = WaveFunction::plane_wave(0, 8).unwrap();
        let spec = FloquetSpectrum::from_propagator(&prop, 0.0).unwrap();
        let j = asymptotic_current_linear(&psi, &spec).unwrap().current;
        let est = running_average_momentum(&psi, 0.0, 1024, &prop, DEFAULT_PLATEAU_TOL).unwrap();
        assert!((est.value - j).abs() < 0.02 * j.abs().max(0.1), "{} vs {j}", est.value);
    }

    #[test]
    fn scan_keeps_grid_order_and_skips() {
        let (params, field) = small(1.0, 0.0, 0.0);
        let spec = ScanSpec {
            axis: ScanAxis::T0,
            grid: t0_grid(field.period(), 4),
            params,
            field,
            initial: WaveFunction::plane_wave(0, 8).unwrap(),
            n_periods: 64,
            max_periods: 64,
            plateau_tol: DEFAULT_PLATEAU_TOL,
        };
        let mut seen = Vec::new();
        let rows = scan(&spec, 1, |r| {
            seen.push(r.index);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.estimate.is_ok()));
    }

    #[test]
    fn t0_scan_moves_the_start_not_the_drive() {
        let (params, field) = small(1.0, 0.0, -1.0);
        let grid = t0_grid(field.period(), 4);
        let spec = ScanSpec {
            axis: ScanAxis::T0,
            grid: grid.clone(),
            params: params.clone(),
            field,
            initial: WaveFunction::plane_wave(0, 8).unwrap(),
            n_periods: 64,
            max_periods: 64,
            plateau_tol: DEFAULT_PLATEAU_TOL,
        };
        let rows = scan(&spec, 0, |_| Ok(())).unwrap();
        let prop = Propagator::new(&params, &field).unwrap();
        for (row, t0) in rows.iter().zip(&grid) {
            let direct = running_average_momentum(&spec.initial, *t0, 64, &prop, DEFAULT_PLATEAU_TOL).unwrap();
            assert_eq!(row.estimate.as_ref().unwrap().value, direct.value);
        }
        let v: Vec<f64> = rows.iter().map(|r| r.estimate.as_ref().unwrap().value).collect();
        assert!((v[0] - v[1]).abs() > 1e-3, "{v:?}");
    }

    #[test]
    fn t0_grid_is_half_open() {
        let g = t0_grid(2.0, 4);
        assert_eq!(g, vec![0.0, 0.5, 1.0, 1.5]);
    }
}
