use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Condensate wavefunction on the ring `x in [0, 2pi)`, stored as plane-wave
/// coefficients `c_n`, `n = -N..=N`, with `psi(x) = sum_n c_n e^{inx} / sqrt(2pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    coeffs: Vec<Complex64>,
    n_max: usize,
}

impl WaveFunction {
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self> {
        let len = coeffs.len();
        if len < 3 || len % 2 == 0 {
            return Err(Error::param(
                "coeffs",
                format!("length must be 2N+1 with N >= 1, got {len}"),
            ));
        }
        Ok(WaveFunction {
            n_max: (len - 1) / 2,
            coeffs,
        })
    }

    pub fn zeros(n_max: usize) -> Self {
        WaveFunction {
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * n_max + 1],
            n_max,
        }
    }

    /// The momentum eigenstate `|n>`.
    pub fn plane_wave(n: i64, n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::param("n_max", "must be at least 1"));
        }
        if n.unsigned_abs() as usize > n_max {
            return Err(Error::OutOfBasis { n, n_max });
        }
        let mut psi = Self::zeros(n_max);
        let idx = psi.index(n);
        psi.coeffs[idx] = Complex64::new(1.0, 0.0);
        Ok(psi)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Storage index of momentum `n`.
    pub fn index(&self, n: i64) -> usize {
        (n + self.n_max as i64) as usize
    }

    /// Momentum quantum number stored at index `i`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        i as i64 - self.n_max as i64
    }

    pub fn coeff(&self, n: i64) -> Option<Complex64> {
        if n.unsigned_abs() as usize > self.n_max {
            None
        } else {
            Some(self.coeffs[self.index(n)])
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.coeffs.iter_mut().for_each(|c| *c /= n);
        }
        self
    }

    pub fn scaled(mut self, factor: Complex64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= factor);
        self
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|<self|other>|` for normalized states.
    pub fn overlap(&self, other: &WaveFunction) -> f64 {
        self.inner(other).norm()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: Complex64, other: &WaveFunction, b: Complex64) -> WaveFunction {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| a * x + b * y)
            .collect();
        WaveFunction {
            coeffs,
            n_max: self.n_max,
        }
    }

    /// `max_n |self_n - other_n|`.
    pub fn max_abs_diff(&self, other: &WaveFunction) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `||self - other||_2`.
    pub fn distance(&self, other: &WaveFunction) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Copy into a basis with a different cutoff, padding with zeros or
    /// dropping the outer components.
    pub fn resized(&self, n_max: usize) -> WaveFunction {
        let mut out = WaveFunction::zeros(n_max);
        let common = self.n_max.min(n_max) as i64;
        for n in -common..=common {
            let i = out.index(n);
            out.coeffs[i] = self.coeffs[self.index(n)];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Index of the largest-modulus coefficient (first one on ties).
    pub fn dominant_index(&self) -> usize {
        let mut best = 0;
        let mut best_val = -1.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let v = c.norm_sqr();
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        best
    }

    /// Position-space values `psi(x_j)` on `x_j = 2 pi j / m`.
    pub fn to_position(&self, m: usize) -> Result<Vec<Complex64>> {
        let grid = SpectralGrid::new(self.n_max, m)?;
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        grid.to_grid(&self.coeffs, &mut buf);
        let s = 1.0 / TAU.sqrt();
        Ok(buf.into_iter().map(|u| u * s).collect())
    }

    /// Project position-space samples `psi(x_j)` onto the basis.
    pub fn from_position(values: &[Complex64], n_max: usize) -> Result<Self> {
        let grid = SpectralGrid::new(n_max, values.len())?;
        let mut buf = values.to_vec();
        let mut psi = WaveFunction::zeros(n_max);
        grid.from_grid(&mut buf, &mut psi.coeffs);
        let s = TAU.sqrt();
        psi.coeffs.iter_mut().for_each(|c| *c *= s);
        Ok(psi)
    }
}

/// Canonical mean momentum `sum_n mu n |c_n|^2`.
pub fn mean_momentum(psi: &WaveFunction, mu: f64) -> f64 {
    momentum_of(psi.coeffs(), mu)
}

pub(crate) fn momentum_of(coeffs: &[Complex64], mu: f64) -> f64 {
    let n_max = (coeffs.len() / 2) as f64;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64 - n_max) * c.norm_sqr())
        .sum::<f64>()
        * mu
}

/// FFT bridge between plane-wave coefficients and a uniform position grid.
///
/// Works with the unnormalised field `u(x_j) = sum_n c_n e^{i n x_j}`, so
/// `|psi(x_j)|^2 = |u_j|^2 / (2 pi)`.
#[derive(Clone)]
pub struct SpectralGrid {
    n_max: usize,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n_max", &self.n_max)
            .field("len", &self.len)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(n_max: usize, len: usize) -> Result<Self> {
        if len < 2 * (2 * n_max + 1) {
            return Err(Error::param(
                "grid",
                format!(
                    "{len} points cannot resolve n_max = {n_max}; need at least {}",
                    2 * (2 * n_max + 1)
                ),
            ));
        }
        let mut planner = FftPlanner::new();
        Ok(SpectralGrid {
            n_max,
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    /// `4(2N+1)` rounded up to a power of two; leaves room for the cubic term.
    pub fn dealiased_len(n_max: usize) -> usize {
        (4 * (2 * n_max + 1)).next_power_of_two()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Coefficients -> `u_j`.
    pub fn to_grid(&self, coeffs: &[Complex64], buf: &mut [Complex64]) {
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len()];
        self.to_grid_with(coeffs, buf, &mut scratch);
    }

    pub fn to_grid_with(&self, coeffs: &[Complex64], buf: &mut [Complex64], scratch: &mut [Complex64]) {
        buf.fill(Complex64::new(0.0, 0.0));
        let n_max = self.n_max as i64;
        let len = self.len as i64;
        for (i, c) in coeffs.iter().enumerate() {
            let n = i as i64 - n_max;
            buf[n.rem_euclid(len) as usize] = *c;
        }
        self.inverse.process_with_scratch(buf, scratch);
    }

    /// `u_j` -> coefficients, discarding modes beyond the cutoff. `buf` is
    /// overwritten.
    pub fn from_grid(&self, buf: &mut [Complex64], coeffs: &mut [Complex64]) {
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len()];
        self.from_grid_with(buf, coeffs, &mut scratch);
    }

    pub fn from_grid_with(&self, buf: &mut [Complex64], coeffs: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
        let inv = 1.0 / self.len as f64;
        let n_max = self.n_max as i64;
        let len = self.len as i64;
        for (i, c) in coeffs.iter_mut().enumerate() {
            let n = i as i64 - n_max;
            *c = buf[n.rem_euclid(len) as usize] * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn plane_waves() {
        let psi = WaveFunction::plane_wave(0, 16).unwrap();
        assert_eq!(psi.dim(), 33);
        assert_eq!(psi.coeff(0), Some(Complex64::new(1.0, 0.0)));
        assert_eq!(psi.norm_sqr(), 1.0);
        assert!(psi
            .coeffs()
            .iter()
            .enumerate()
            .all(|(i, c)| i == 16 || *c == Complex64::new(0.0, 0.0)));

        let one = WaveFunction::plane_wave(1, 16).unwrap();
        assert_relative_eq!(mean_momentum(&one, 0.2), 0.2, epsilon = 1e-15);

        assert!(matches!(
            WaveFunction::plane_wave(17, 16),
            Err(Error::OutOfBasis { n: 17, n_max: 16 })
        ));
        assert!(WaveFunction::plane_wave(-17, 16).is_err());
    }

    #[test]
    fn momenta() {
        let mu = 0.2;
        assert_eq!(mean_momentum(&WaveFunction::plane_wave(0, 4).unwrap(), mu), 0.0);
        let a = WaveFunction::plane_wave(1, 4).unwrap();
        let b = WaveFunction::plane_wave(-1, 4).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sym = a.combine(Complex64::new(s, 0.0), &b, Complex64::new(s, 0.0));
        assert_relative_eq!(mean_momentum(&sym, mu), 0.0, epsilon = 1e-15);
        assert_relative_eq!(
            mean_momentum(&WaveFunction::plane_wave(2, 4).unwrap(), mu),
            0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ground_plane_wave_is_flat_in_position() {
        let psi = WaveFunction::plane_wave(0, 8).unwrap();
        let vals = psi.to_position(64).unwrap();
        for v in vals {
            assert_relative_eq!(v.re, 1.0 / TAU.sqrt(), epsilon = 1e-14);
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn position_values_match_direct_sum() {
        let coeffs: Vec<_> = (0..9)
            .map(|k| Complex64::new(k as f64 * 0.1, 0.3 - k as f64 * 0.05))
            .collect();
        let psi = WaveFunction::from_coeffs(coeffs).unwrap();
        let m = 40;
        let vals = psi.to_position(m).unwrap();
        for (j, v) in vals.iter().enumerate() {
            let x = TAU * j as f64 / m as f64;
            let direct: Complex64 = (0..psi.dim())
                .map(|i| psi.coeffs()[i] * Complex64::from_polar(1.0, psi.wavenumber(i) as f64 * x))
                .sum::<Complex64>()
                / TAU.sqrt();
            assert!((v - direct).norm() < 1e-13);
        }
    }

    #[test]
    fn grid_too_small_is_rejected() {
        assert!(SpectralGrid::new(16, 40).is_err());
        assert_eq!(SpectralGrid::dealiased_len(16), 256);
        assert_eq!(SpectralGrid::dealiased_len(32), 512);
    }

    #[test]
    fn resize_pads_and_truncates() {
        let psi = WaveFunction::plane_wave(3, 4).unwrap();
        let big = psi.resized(8);
        assert_eq!(big.coeff(3), Some(Complex64::new(1.0, 0.0)));
        assert_eq!(big.norm_sqr(), 1.0);
        assert_eq!(big.resized(4), psi);
        assert_eq!(psi.resized(2).norm_sqr(), 0.0);
    }

    proptest! {
        #[test]
        fn position_round_trip(re in proptest::collection::vec(-1.0..1.0f64, 11),
                               im in proptest::collection::vec(-1.0..1.0f64, 11)) {
            let coeffs: Vec<_> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
            let psi = WaveFunction::from_coeffs(coeffs).unwrap();
            let m = SpectralGrid::dealiased_len(psi.n_max());
            let back = WaveFunction::from_position(&psi.to_position(m).unwrap(), psi.n_max()).unwrap();
            prop_assert!(back.max_abs_diff(&psi) < 1e-14);
            // Parseval: sum |psi(x_j)|^2 dx = sum |c_n|^2
            let dx = TAU / m as f64;
            let pos: f64 = psi.to_position(m).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>() * dx;
            prop_assert!((pos - psi.norm_sqr()).abs() < 1e-12);
        }
    }
}
