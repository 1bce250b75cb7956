//! One-period Floquet operator of the non-interacting problem, its
//! eigenphases, band tracking in `theta`, and the asymptotic current of an
//! initial state expanded in Floquet states.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{DrivingField, ModelParams};
use crate::spectral::{Propagator, WaveFunction};

/// Eigenphase spacing below which eigenvectors are re-resolved by
/// simultaneous diagonalisation of the Hermitian parts.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Tolerance at which an input is still accepted as unitary.
pub const UNITARITY_REJECT: f64 = 1e-6;

/// Map an eigenphase onto `(-pi, pi]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI {
        p += 2.0 * PI;
    }
    p
}

/// Distance between two phases on the circle.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// `max |(U^H U - I)_ij|`.
pub fn unitarity_defect(u: &DMatrix<Complex64>) -> f64 {
    let prod = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Transposition along the codiagonal, `(U^*)_{ij} = U_{D-1-j, D-1-i}`.
pub fn codiagonal_transpose(u: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let d = u.nrows();
    DMatrix::from_fn(d, d, |i, j| u[(d - 1 - j, d - 1 - i)])
}

/// Floquet operator `U(t0 + T, t0)` at zero coupling; column `a` is the
/// image of the basis state `a`.
pub fn build_floquet_operator(params: &ModelParams, field: &DrivingField, t0: f64) -> Result<DMatrix<Complex64>> {
    if params.g != 0.0 {
        return Err(Error::param("g", "the Floquet operator is defined at g = 0"));
    }
    let prop = Propagator::new(params, field)?;
    floquet_operator(&prop, t0)
}

/// Floquet operator for an existing propagator (its `g` must be zero).
pub fn floquet_operator(prop: &Propagator, t0: f64) -> Result<DMatrix<Complex64>> {
    if prop.params().g != 0.0 {
        return Err(Error::param("g", "the Floquet operator is defined at g = 0"));
    }
    let d = prop.dim();
    let n_max = prop.params().n_max;
    let columns = exec::map_range(d, |a| {
        let basis = WaveFunction::plane_wave(a as i64 - n_max as i64, n_max)?;
        prop.evolve_period(&basis, t0)
    });
    let mut u = DMatrix::zeros(d, d);
    for (a, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (i, c) in col.coeffs().iter().enumerate() {
            u[(i, a)] = *c;
        }
    }
    let defect = unitarity_defect(&u);
    if defect > UNITARITY_REJECT {
        return Err(Error::NotUnitary { defect });
    }
    Ok(u)
}

/// Eigenphases and eigenvectors of a unitary matrix, sorted by phase.
#[derive(Debug, Clone)]
pub struct UnitaryEigen {
    /// `eps_a` with `U v_a = exp(-i eps_a) v_a`, in `(-pi, pi]`.
    pub quasienergies: Vec<f64>,
    pub states: Vec<WaveFunction>,
}

impl UnitaryEigen {
    /// `sum_a exp(-i eps_a) |v_a><v_a|`.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let d = self.states.len();
        let mut u = DMatrix::zeros(d, d);
        for (eps, v) in self.quasienergies.iter().zip(&self.states) {
            let phase = Complex64::from_polar(1.0, -eps);
            let c = v.coeffs();
            for i in 0..d {
                let ci = c[i] * phase;
                for j in 0..d {
                    u[(i, j)] += ci * c[j].conj();
                }
            }
        }
        u
    }
}

/// Diagonalise a unitary matrix via its complex Schur form; clusters of
/// eigenphases closer than [`DEGENERACY_TOL`] are re-resolved by jointly
/// diagonalising `(U + U^H)/2` and `(U - U^H)/(2i)` on the cluster.
pub fn diagonalize_unitary(u: &DMatrix<Complex64>) -> Result<UnitaryEigen> {
    if !u.is_square() || u.nrows() < 1 {
        return Err(Error::Eigen("matrix must be square and nonempty".into()));
    }
    let defect = unitarity_defect(u);
    if defect > UNITARITY_REJECT {
        return Err(Error::NotUnitary { defect });
    }
    let d = u.nrows();
    let schur = nalgebra::linalg::Schur::try_new(u.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let (q, _) = schur.unpack();

    let mut vecs: Vec<Vec<Complex64>> = (0..d).map(|k| q.column(k).iter().copied().collect()).collect();
    let mut phases: Vec<f64> = vecs.iter().map(|v| rayleigh_phase(u, v)).collect();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| phases[a].total_cmp(&phases[b]));
    let sorted_vecs: Vec<_> = order.iter().map(|&k| vecs[k].clone()).collect();
    let sorted_phases: Vec<_> = order.iter().map(|&k| phases[k]).collect();
    vecs = sorted_vecs;
    phases = sorted_phases;

    for cluster in clusters(&phases, DEGENERACY_TOL) {
        if cluster.len() > 1 {
            refine_cluster(u, &mut vecs, &cluster);
            for &k in &cluster {
                phases[k] = rayleigh_phase(u, &vecs[k]);
            }
        }
    }

    let states = vecs
        .into_iter()
        .map(|mut v| {
            fix_gauge(&mut v);
            WaveFunction::from_coeffs(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UnitaryEigen {
        quasienergies: phases,
        states,
    })
}

fn rayleigh_phase(u: &DMatrix<Complex64>, v: &[Complex64]) -> f64 {
    let d = v.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..d {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..d {
            row += u[(i, j)] * v[j];
        }
        acc += v[i].conj() * row;
    }
    wrap_phase(-acc.arg())
}

/// Groups of consecutive (circularly) phases closer than `tol`.
fn clusters(sorted: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (k, &p) in sorted.iter().enumerate() {
        match out.last_mut() {
            Some(last) if phase_distance(p, sorted[*last.last().unwrap()]) < tol => last.push(k),
            _ => out.push(vec![k]),
        }
    }
    if out.len() > 1 {
        let first = sorted[out[0][0]];
        let last = sorted[*out.last().unwrap().last().unwrap()];
        if phase_distance(first, last) < tol {
            let tail = out.pop().unwrap();
            out[0].extend(tail);
        }
    }
    out
}

fn refine_cluster(u: &DMatrix<Complex64>, vecs: &mut [Vec<Complex64>], cluster: &[usize]) {
    let d = u.nrows();
    let basis = DMatrix::from_fn(d, cluster.len(), |i, j| vecs[cluster[j]][i]);
    let h_re = (u + u.adjoint()).scale(0.5);
    let h_im = (u - u.adjoint()) * Complex64::new(0.0, -0.5);
    let a = basis.adjoint() * &h_re * &basis;
    let b = basis.adjoint() * &h_im * &basis;
    let (_, rotation) = joint_hermitian_eigen(&a, &b);
    let rotated = &basis * rotation;
    for (j, &k) in cluster.iter().enumerate() {
        vecs[k] = rotated.column(j).iter().copied().collect();
    }
}

/// Common eigenbasis of two commuting Hermitian matrices: diagonalise `a`,
/// then `b` inside each degenerate eigenspace of `a`.
fn joint_hermitian_eigen(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = a.nrows();
    let eig = nalgebra::linalg::SymmetricEigen::new(hermitize(a));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let vals: Vec<f64> = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (vals[end] - vals[start]).abs() < 1e-9 {
            end += 1;
        }
        if end - start > 1 {
            let sub = vecs.columns(start, end - start).into_owned();
            let bb = hermitize(&(sub.adjoint() * b * &sub));
            let inner = nalgebra::linalg::SymmetricEigen::new(bb);
            let rotated = &sub * inner.eigenvectors;
            vecs.columns_mut(start, end - start).copy_from(&rotated);
        }
        start = end;
    }
    (vals, vecs)
}

fn hermitize(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()).scale(0.5)
}

/// Fix the free phase of an eigenvector: largest component real positive.
pub(crate) fn fix_gauge(v: &mut [Complex64]) {
    let mut best = 0;
    for (i, c) in v.iter().enumerate() {
        if c.norm_sqr() > v[best].norm_sqr() {
            best = i;
        }
    }
    let n = v[best].norm();
    if n > 0.0 {
        let phase = v[best].conj() / n;
        v.iter_mut().for_each(|c| *c *= phase);
    }
}

/// Linear Floquet spectrum at a given phase `theta` and start time `t0`.
#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    pub quasienergies: Vec<f64>,
    /// Eigenvectors at `t = t0`.
    pub states: Vec<WaveFunction>,
    /// Period-averaged canonical momentum of each state.
    pub momenta: Vec<f64>,
    pub theta: f64,
    pub t0: f64,
}

impl FloquetSpectrum {
    /// Build, diagonalise, and measure momenta at `g = 0`.
    pub fn compute(params: &ModelParams, field: &DrivingField, t0: f64) -> Result<Self> {
        let linear = params.with_g(0.0);
        let prop = Propagator::new(&linear, field)?;
        Self::from_propagator(&prop, t0)
    }

    pub fn from_propagator(prop: &Propagator, t0: f64) -> Result<Self> {
        let u = floquet_operator(prop, t0)?;
        let eig = diagonalize_unitary(&u)?;
        let momenta = floquet_mean_momenta(&eig.states, prop, t0)?;
        Ok(FloquetSpectrum {
            quasienergies: eig.quasienergies,
            states: eig.states,
            momenta,
            theta: prop.field().theta,
            t0,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the state with the largest overlap with `psi`.
    pub fn best_match(&self, psi: &WaveFunction) -> usize {
        let mut best = 0;
        let mut best_val = -1.0;
        for (k, s) in self.states.iter().enumerate() {
            let o = s.overlap(psi);
            if o > best_val {
                best = k;
                best_val = o;
            }
        }
        best
    }
}

/// `<p>_a = (1/T) int_{t0}^{t0+T} <psi_a(t)| p |psi_a(t)> dt`, trapezoidal at
/// every integrator step.
pub fn floquet_mean_momenta(states: &[WaveFunction], prop: &Propagator, t0: f64) -> Result<Vec<f64>> {
    exec::map_slice(states, |s| prop.evolve_period_with_momentum(s, t0).map(|(_, p)| p))
        .into_iter()
        .collect()
}

/// Result of expanding an initial state in Floquet states.
#[derive(Debug, Clone)]
pub struct CurrentExpansion {
    pub current: f64,
    /// `|C_a|^2`.
    pub occupations: Vec<f64>,
}

/// `J(t0) = sum_a <p>_a |C_a(t0)|^2`.
pub fn asymptotic_current_linear(initial: &WaveFunction, spectrum: &FloquetSpectrum) -> Result<CurrentExpansion> {
    let occupations: Vec<f64> = spectrum.states.iter().map(|s| s.inner(initial).norm_sqr()).collect();
    check_expansion(&occupations)?;
    let current = occupations.iter().zip(&spectrum.momenta).map(|(w, p)| w * p).sum();
    Ok(CurrentExpansion { current, occupations })
}

/// Current averaged over `n_samples` equally spaced start times in `[0, T)`.
pub fn t0_average_current(
    theta: f64,
    params: &ModelParams,
    field_template: &DrivingField,
    initial: &WaveFunction,
    n_samples: usize,
) -> Result<f64> {
    let currents = t0_currents(theta, params, field_template, initial, n_samples)?;
    Ok(currents.iter().sum::<f64>() / n_samples as f64)
}

/// Linear currents `J(t0)` for `n_samples` equally spaced start times.
fn check_expansion(occupations: &[f64]) -> Result<()> {
    let total: f64 = occupations.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::ExpansionDefect { defect: total - 1.0 });
    }
    Ok(())
}

/// Linear currents for `n_samples` start times spread over one period.
///
/// The Floquet states at a later start time are the propagated eigenstates
/// of the first one, with unchanged quasienergies and momenta, so a single
/// diagonalization serves the whole grid whenever the grid points fall on
/// integrator steps.
pub fn t0_currents(
    theta: f64,
    params: &ModelParams,
    field_template: &DrivingField,
    initial: &WaveFunction,
    n_samples: usize,
) -> Result<Vec<f64>> {
    if n_samples < 8 {
        return Err(Error::param("n_samples", "at least 8 start times are required"));
    }
    let field = field_template.with_theta(theta);
    let prop = Propagator::new(&params.with_g(0.0), &field)?;
    let period = field.period();
    if prop.steps_per_period() % n_samples != 0 {
        return exec::map_range(n_samples, |k| {
            let t0 = field.t0 + period * k as f64 / n_samples as f64;
            let spectrum = FloquetSpectrum::from_propagator(&prop, t0)?;
            asymptotic_current_linear(initial, &spectrum).map(|c| c.current)
        })
        .into_iter()
        .collect();
    }
    let spectrum = FloquetSpectrum::from_propagator(&prop, field.t0)?;
    let orbits: Vec<Vec<WaveFunction>> =
        exec::map_slice(&spectrum.states, |s| prop.sample_period(s, field.t0, n_samples))
            .into_iter()
            .collect::<Result<_>>()?;
    (0..n_samples)
        .map(|k| {
            let mut occupations = Vec::with_capacity(orbits.len());
            let mut current = 0.0;
            for (orbit, p) in orbits.iter().zip(&spectrum.momenta) {
                let w = orbit[k].inner(initial).norm_sqr();
                current += p * w;
                occupations.push(w);
            }
            check_expansion(&occupations)?;
            Ok(current)
        })
        .collect()
}

/// Quasienergy bands followed across a `theta` grid.
#[derive(Debug, Clone)]
pub struct BandSet {
    pub theta_grid: Vec<f64>,
    /// `quasienergies[band][k]` at `theta_grid[k]`.
    pub quasienergies: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<f64>>,
    /// Eigenvectors per band and grid point.
    pub states: Vec<Vec<WaveFunction>>,
    /// Smallest overlap between consecutive eigenvectors of each band.
    pub min_overlap: Vec<f64>,
}

/// Location of the closest approach of two bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub band_a: usize,
    pub band_b: usize,
    pub gap: f64,
    pub theta: f64,
    pub index: usize,
}

impl BandSet {
    pub fn n_bands(&self) -> usize {
        self.quasienergies.len()
    }

    /// Minimal quasienergy distance (on the circle) between two bands.
    pub fn min_gap(&self, a: usize, b: usize) -> GapReport {
        let mut best = GapReport {
            band_a: a,
            band_b: b,
            gap: f64::INFINITY,
            theta: f64::NAN,
            index: 0,
        };
        for k in 0..self.theta_grid.len() {
            let gap = phase_distance(self.quasienergies[a][k], self.quasienergies[b][k]);
            if gap < best.gap {
                best.gap = gap;
                best.theta = self.theta_grid[k];
                best.index = k;
            }
        }
        best
    }

    /// Minimal gap for every pair of bands.
    pub fn all_min_gaps(&self) -> Vec<GapReport> {
        let n = self.n_bands();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                out.push(self.min_gap(a, b));
            }
        }
        out
    }

    /// Band whose state at grid point `k` has the largest overlap with `psi`.
    pub fn band_matching(&self, k: usize, psi: &WaveFunction) -> usize {
        let mut best = 0;
        let mut best_val = -1.0;
        for b in 0..self.n_bands() {
            let o = self.states[b][k].overlap(psi);
            if o > best_val {
                best = b;
                best_val = o;
            }
        }
        best
    }
}

/// Follow every band across `theta_grid` by greedy maximal-overlap matching
/// of consecutive eigenvectors.
pub fn track_bands(theta_grid: &[f64], params: &ModelParams, field: &DrivingField, t0: f64) -> Result<BandSet> {
    if theta_grid.is_empty() {
        return Err(Error::param("theta_grid", "must not be empty"));
    }
    let spectra = exec::map_slice(theta_grid, |&theta| {
        FloquetSpectrum::compute(params, &field.with_theta(theta), t0)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    bands_from_spectra(theta_grid, &spectra)
}

/// Band matching on precomputed spectra.
pub fn bands_from_spectra(theta_grid: &[f64], spectra: &[FloquetSpectrum]) -> Result<BandSet> {
    let d = spectra[0].len();
    let mut assign: Vec<Vec<usize>> = vec![(0..d).collect()];
    let mut min_overlap = vec![1.0f64; d];
    for k in 1..spectra.len() {
        let prev_idx = assign.last().unwrap();
        let prev = &spectra[k - 1];
        let cur = &spectra[k];
        // overlaps[band][candidate]
        let overlaps: Vec<Vec<f64>> = (0..d)
            .map(|band| {
                let s = &prev.states[prev_idx[band]];
                cur.states.iter().map(|c| s.overlap(c)).collect()
            })
            .collect();
        let mut taken_band = vec![false; d];
        let mut taken_cand = vec![false; d];
        let mut next = vec![usize::MAX; d];
        let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(d * d);
        for (band, row) in overlaps.iter().enumerate() {
            for (cand, &o) in row.iter().enumerate() {
                entries.push((o, band, cand));
            }
        }
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (o, band, cand) in entries {
            if taken_band[band] || taken_cand[cand] {
                continue;
            }
            if o < 0.5 {
                return Err(Error::BandContinuity {
                    theta: theta_grid[k],
                    overlap: o,
                });
            }
            // a second candidate almost as good means the grid cannot
            // resolve which way the band went
            let row = &overlaps[band];
            let second = row
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != cand)
                .map(|(_, &v)| v)
                .fold(0.0, f64::max);
            if o - second < 0.05 {
                return Err(Error::AmbiguousBands {
                    theta: theta_grid[k],
                    best: o,
                    second,
                });
            }
            taken_band[band] = true;
            taken_cand[cand] = true;
            next[band] = cand;
            min_overlap[band] = min_overlap[band].min(o);
        }
        assign.push(next);
    }

    let n = spectra.len();
    let mut quasienergies = vec![Vec::with_capacity(n); d];
    let mut momenta = vec![Vec::with_capacity(n); d];
    let mut states = vec![Vec::with_capacity(n); d];
    for (k, idx) in assign.iter().enumerate() {
        for band in 0..d {
            let j = idx[band];
            quasienergies[band].push(spectra[k].quasienergies[j]);
            momenta[band].push(spectra[k].momenta[j]);
            states[band].push(spectra[k].states[j].clone());
        }
    }
    Ok(BandSet {
        theta_grid: theta_grid.to_vec(),
        quasienergies,
        momenta,
        states,
        min_overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const N: usize = 6;

    fn setup(e2: f64, theta: f64, v0: f64) -> (ModelParams, DrivingField) {
        let field = DrivingField::lattice_reference(e2, theta);
        let params = ModelParams::for_field(0.2, v0, 0.0, N, &field, 256).unwrap();
        (params, field)
    }

    fn random_unitary(d: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(d, d, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        m.qr().q()
    }

    fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    #[test]
    fn diagonal_unitary_gives_its_phases() {
        let phases = [0.3, -2.0, 1.1, 3.0, -0.7];
        let u = DMatrix::from_fn(5, 5, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, -phases[i])
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let eig = diagonalize_unitary(&u).unwrap();
        let mut want = phases.to_vec();
        want.sort_by(f64::total_cmp);
        for (a, b) in eig.quasienergies.iter().zip(&want) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn degenerate_spectrum_is_resolved() {
        let v = random_unitary(5, 7);
        let phases = [0.4, 0.4, 0.4, -1.0, 2.5];
        let diag = DMatrix::from_fn(5, 5, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, -phases[i])
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let u = &v * diag * v.adjoint();
        let eig = diagonalize_unitary(&u).unwrap();
        assert!(max_diff(&eig.reconstruct(), &u) < 1e-12);
        for a in 0..5 {
            for b in 0..5 {
                let ip = eig.states[a].inner(&eig.states[b]).norm();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_unitary() {
        let mut u = random_unitary(5, 3);
        u[(0, 0)] += Complex64::new(0.01, 0.0);
        assert!(matches!(diagonalize_unitary(&u), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn free_driven_particle_is_diagonal() {
        let (params, field) = setup(1.2, -1.0, 0.0);
        let spec = FloquetSpectrum::compute(&params, &field, 0.0).unwrap();
        let period = field.period();
        let mut want: Vec<f64> = (-(N as i64)..=N as i64)
            .map(|n| wrap_phase(0.2 * (n * n) as f64 * period / 2.0))
            .collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in spec.quasienergies.iter().zip(&want) {
            assert!(phase_distance(*a, *b) < 1e-10, "{a} vs {b}");
        }
        for (s, p) in spec.states.iter().zip(&spec.momenta) {
            let k = s.dominant_index();
            assert!(s.coeffs()[k].norm() > 1.0 - 1e-10);
            assert!((p - 0.2 * s.wavenumber(k) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn operator_is_unitary_and_reconstructs() {
        let (params, field) = setup(1.2, -1.6, 1.0);
        let u = build_floquet_operator(&params, &field, 0.0).unwrap();
        assert!(unitarity_defect(&u) < 1e-12);
        let eig = diagonalize_unitary(&u).unwrap();
        assert!(max_diff(&eig.reconstruct(), &u) < 1e-11);
        assert!(eig.quasienergies.iter().all(|e| *e > -PI && *e <= PI));
        assert!(build_floquet_operator(&params.with_g(0.1), &field, 0.0).is_err());
    }

    #[test]
    fn time_reversal_symmetric_drive_gives_codiagonal_symmetry() {
        let (params, field) = setup(1.2, 0.0, 1.0);
        let u = build_floquet_operator(&params, &field, 0.0).unwrap();
        assert!(max_diff(&codiagonal_transpose(&u), &u) < 1e-10);
        let (params, field) = setup(1.2, -1.0, 1.0);
        let u = build_floquet_operator(&params, &field, 0.0).unwrap();
        assert!(max_diff(&codiagonal_transpose(&u), &u) > 1e-4);
    }

    #[test]
    fn spectrum_is_even_in_theta() {
        let (params, field) = setup(1.2, 0.0, 1.0);
        for theta in [-2.3, -0.9, 0.4] {
            let a = FloquetSpectrum::compute(&params, &field.with_theta(theta), 0.0).unwrap();
            let b = FloquetSpectrum::compute(&params, &field.with_theta(-theta), 0.0).unwrap();
            for e in &a.quasienergies {
                let d = b
                    .quasienergies
                    .iter()
                    .map(|f| phase_distance(*e, *f))
                    .fold(f64::MAX, f64::min);
                assert!(d < 1e-10, "theta {theta}: {d}");
            }
        }
    }

    #[test]
    fn undriven_states_carry_no_momentum() {
        let field = DrivingField::new(0.0, 0.0, 3.0, 0.0, 0.0).unwrap();
        let params = ModelParams::for_field(0.2, 1.0, 0.0, N, &field, 256).unwrap();
        let spec = FloquetSpectrum::compute(&params, &field, 0.0).unwrap();
        for p in &spec.momenta {
            assert!(p.abs() < 1e-10, "{p}");
        }
    }

    #[test]
    fn expansion_sums_to_one() {
        let (params, field) = setup(1.2, -1.0, 1.0);
        let spec = FloquetSpectrum::compute(&params, &field, 0.0).unwrap();
        let psi = WaveFunction::plane_wave(0, N).unwrap();
        let exp = asymptotic_current_linear(&psi, &spec).unwrap();
        let total: f64 = exp.occupations.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let big = psi.scaled(Complex64::new(1.1, 0.0));
        assert!(matches!(
            asymptotic_current_linear(&big, &spec),
            Err(Error::ExpansionDefect { .. })
        ));
    }

    #[test]
    fn propagated_states_serve_later_start_times() {
        let (params, field) = setup(1.2, -1.0, 1.0);
        let psi = WaveFunction::plane_wave(0, N).unwrap();
        let fast = t0_currents(-1.0, &params, &field, &psi, 16).unwrap();
        let prop = Propagator::new(&params, &field).unwrap();
        for k in [0, 5, 11] {
            let t0 = field.period() * k as f64 / 16.0;
            let spec = FloquetSpectrum::from_propagator(&prop, t0).unwrap();
            let j = asymptotic_current_linear(&psi, &spec).unwrap().current;
            assert!((fast[k] - j).abs() < 1e-9, "k {k}: {} vs {j}", fast[k]);
        }
    }

    #[test]
    fn averaged_current_is_odd_in_theta() {
        let (params, field) = setup(1.2, 0.0, 1.0);
        let psi = WaveFunction::plane_wave(0, N).unwrap();
        let j = |theta: f64| t0_average_current(theta, &params, &field, &psi, 16).unwrap();
        let (a, b, c) = (j(-1.0), j(1.0), j(-1.0 + PI));
        assert!((a + b).abs() < 1e-3, "{a} {b}");
        assert!((a + c).abs() < 1e-3, "{a} {c}");
        assert!(j(0.0).abs() < 1e-3);
    }

    #[test]
    fn bands_follow_smooth_spectra() {
        let (params, field) = setup(1.2, 0.0, 1.0);
        let grid: Vec<f64> = (0..6).map(|k| -1.0 + 0.02 * k as f64).collect();
        let bands = track_bands(&grid, &params, &field, 0.0).unwrap();
        assert_eq!(bands.n_bands(), 2 * N + 1);
        for k in 0..grid.len() {
            let spec = FloquetSpectrum::compute(&params, &field.with_theta(grid[k]), 0.0).unwrap();
            let mut ours: Vec<f64> = (0..bands.n_bands()).map(|b| bands.quasienergies[b][k]).collect();
            ours.sort_by(f64::total_cmp);
            for (a, b) in ours.iter().zip(&spec.quasienergies) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let gap = bands.min_gap(0, 1);
        assert!(gap.gap >= 0.0 && grid.contains(&gap.theta));
    }

    proptest! {
        #[test]
        fn wrap_phase_lands_in_range(p in -100.0f64..100.0) {
            let w = wrap_phase(p);
            prop_assert!(w > -PI && w <= PI);
            prop_assert!(phase_distance(w, p) < 1e-9);
        }

        #[test]
        fn random_unitaries_reconstruct(seed in any::<u64>(), half in 1usize..5) {
            let u = random_unitary(2 * half + 1, seed);
            let eig = diagonalize_unitary(&u).unwrap();
            prop_assert!(max_diff(&eig.reconstruct(), &u) < 1e-11);
            prop_assert!(eig.quasienergies.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
