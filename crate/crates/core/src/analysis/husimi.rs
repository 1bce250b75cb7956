//! Husimi phase-space density with Gaussian coherent states on the ring.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::spectral::WaveFunction;

pub const MIN_RESOLUTION: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HusimiSpec {
    pub nx: usize,
    pub np: usize,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for HusimiSpec {
    fn default() -> Self {
        HusimiSpec {
            nx: 64,
            np: 64,
            p_min: -3.0,
            p_max: 3.0,
        }
    }
}

impl HusimiSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < MIN_RESOLUTION || self.np < MIN_RESOLUTION {
            return Err(Error::param(
                "husimi",
                format!(
                    "resolution {}x{} below {MIN_RESOLUTION}x{MIN_RESOLUTION}",
                    self.nx, self.np
                ),
            ));
        }
        if !(self.p_min.is_finite() && self.p_max.is_finite() && self.p_max > self.p_min) {
            return Err(Error::param("husimi", "need finite p_min < p_max"));
        }
        Ok(())
    }

    pub fn x_grid(&self) -> Vec<f64> {
        (0..self.nx).map(|i| TAU * i as f64 / self.nx as f64).collect()
    }

    pub fn p_grid(&self) -> Vec<f64> {
        let dp = (self.p_max - self.p_min) / (self.np - 1) as f64;
        (0..self.np).map(|j| self.p_min + dp * j as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HusimiGrid {
    pub x_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    /// Row-major, `values[i * np + j]` at `(x_grid[i], p_grid[j])`.
    pub values: Vec<f64>,
    pub mu: f64,
}

/// Coherent-state widths `(sigma_x, sigma_p)` for a given `mu`.
pub fn coherent_widths(mu: f64) -> (f64, f64) {
    let sx = (mu / 2.0).sqrt();
    (sx, mu / (2.0 * sx))
}

/// Normalised coherent state centred at `(x0, p0)`. The periodised Gaussian
/// `sum_m exp(-(x - x0 + 2 pi m)^2 / (4 sx^2) + i p0 (x + 2 pi m) / mu)` has
/// plane-wave coefficients `exp(-sx^2 k^2 - i k x0)`, `k = n - p0/mu`, up to
/// normalisation.
pub fn coherent_state(x0: f64, p0: f64, mu: f64, n_max: usize) -> WaveFunction {
    let (sx, _) = coherent_widths(mu);
    let coeffs: Vec<Complex64> = (0..2 * n_max + 1)
        .map(|i| {
            let k = (i as f64 - n_max as f64) - p0 / mu;
            Complex64::from_polar((-sx * sx * k * k).exp(), -k * x0)
        })
        .collect();
    WaveFunction::from_coeffs(coeffs).expect("odd length").normalized()
}

/// `H(x0, p0) = |<x0, p0|psi>|^2 / (2 pi mu)`.
pub fn husimi(psi: &WaveFunction, spec: &HusimiSpec, mu: f64) -> Result<HusimiGrid> {
    spec.validate()?;
    if !(mu > 0.0) {
        return Err(Error::param("mu", "must be positive"));
    }
    let x_grid = spec.x_grid();
    let p_grid = spec.p_grid();
    let n_max = psi.n_max();
    let np = p_grid.len();
    let scale = 1.0 / (TAU * mu);
    let values = exec::map_range(x_grid.len() * np, |k| {
        let c = coherent_state(x_grid[k / np], p_grid[k % np], mu, n_max);
        c.inner(psi).norm_sqr() * scale
    });
    Ok(HusimiGrid {
        x_grid,
        p_grid,
        values,
        mu,
    })
}

impl HusimiGrid {
    pub fn nx(&self) -> usize {
        self.x_grid.len()
    }

    pub fn np(&self) -> usize {
        self.p_grid.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.np() + j]
    }

    pub fn dx(&self) -> f64 {
        TAU / self.nx() as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_grid[self.np() - 1] - self.p_grid[0]) / (self.np() - 1) as f64
    }

    /// `sum H dx dp`; close to one when the grid covers the state.
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dp()
    }

    /// Inverse participation ratio of the normalised grid weights, relative
    /// to a uniform grid (1 for uniform, up to `nx * np` for a single cell).
    pub fn relative_ipr(&self) -> f64 {
        let s: f64 = self.values.iter().sum();
        if s <= 0.0 {
            return 0.0;
        }
        let ipr: f64 = self.values.iter().map(|v| (v / s).powi(2)).sum();
        ipr * self.values.len() as f64
    }

    /// Grid cell `(i, j)` of the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        (k / self.np(), k % self.np())
    }

    pub fn sidecar(&self) -> HusimiSidecar {
        let (sigma_x, sigma_p) = coherent_widths(self.mu);
        HusimiSidecar {
            nx: self.nx(),
            np: self.np(),
            x_min: 0.0,
            x_max: TAU,
            p_min: self.p_grid[0],
            p_max: self.p_grid[self.np() - 1],
            sigma_x,
            sigma_p,
            mu: self.mu,
            normalization: self.total(),
            prefactor: format!("1/(2*pi*mu) = {}", 1.0 / (2.0 * PI * self.mu)),
        }
    }
}

/// Grid metadata written next to a Husimi table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HusimiSidecar {
    pub nx: usize,
    pub np: usize,
    pub x_min: f64,
    /// Exclusive.
    pub x_max: f64,
    pub p_min: f64,
    /// Inclusive.
    pub p_max: f64,
    pub sigma_x: f64,
    pub sigma_p: f64,
    pub mu: f64,
    pub normalization: f64,
    pub prefactor: String,
}

impl HusimiSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
