//! Nonlinear Floquet states: fixed points of the one-period GPE map up to a
//! phase, found by Newton iteration and followed in `g`.
//!
//! The unknowns are `Y = (Re psi, Im psi, eps)`. The map conserves the norm,
//! so the norm component of the residual vanishes identically and the
//! solutions come in a two-parameter family (global phase, norm). The solver
//! removes both directions: the phase of the largest coefficient is pinned
//! real and nonnegative, and `|psi|^2 = 1` is imposed as an extra equation.
//! The resulting system has one more equation than unknowns and is solved in
//! the least-squares sense through an SVD.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::linear::fix_gauge;
use crate::error::{Error, Result};
use crate::exec;
use crate::spectral::{Propagator, SpectralGrid, WaveFunction};

/// Orbit samples per period for the quartic time integrals.
pub const ORBIT_SAMPLES: usize = 128;

/// Singular value ratio below which the pinned Jacobian counts as singular.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Largest allowed residual component.
    pub tol: f64,
    /// Forward-difference step per unknown.
    pub fd_step: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            fd_step: 1e-7,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearFloquetState {
    /// State at the start time, unit norm, largest coefficient real.
    pub state: WaveFunction,
    /// Phase lost over one period, continuous along a branch (not wrapped).
    pub quasienergy: f64,
    pub g: f64,
    /// Largest residual component at the returned state.
    pub residual: f64,
    pub iterations: usize,
}

/// One-period nonlinear map.
pub fn period_map(prop: &Propagator, psi: &WaveFunction, t0: f64) -> Result<WaveFunction> {
    prop.evolve_period(psi, t0)
}

/// `Y = (Re psi, Im psi, eps)`.
pub fn pack(psi: &WaveFunction, eps: f64) -> Vec<f64> {
    let c = psi.coeffs();
    c.iter()
        .map(|z| z.re)
        .chain(c.iter().map(|z| z.im))
        .chain(std::iter::once(eps))
        .collect()
}

pub fn unpack(y: &[f64]) -> Result<(WaveFunction, f64)> {
    if y.len() < 7 || y.len() % 2 == 0 {
        return Err(Error::param(
            "Y",
            format!("length {} is not 2D + 1 for an odd D", y.len()),
        ));
    }
    let d = (y.len() - 1) / 2;
    let coeffs = (0..d).map(|i| Complex64::new(y[i], y[d + i])).collect();
    Ok((WaveFunction::from_coeffs(coeffs)?, y[2 * d]))
}

/// `F(Y)`: real and imaginary parts of `e^{i eps} U psi - psi`, then
/// `|U psi|^2 - |psi|^2`.
pub fn residual(y: &[f64], prop: &Propagator, t0: f64) -> Result<Vec<f64>> {
    let (psi, eps) = unpack(y)?;
    let mapped = period_map(prop, &psi, t0)?;
    let mut f = phase_defect(&psi, &mapped, eps);
    f.push(mapped.norm_sqr() - psi.norm_sqr());
    Ok(f)
}

fn phase_defect(psi: &WaveFunction, mapped: &WaveFunction, eps: f64) -> Vec<f64> {
    phase_defect_slices(psi.coeffs(), mapped.coeffs(), eps)
}

fn phase_defect_slices(psi: &[Complex64], mapped: &[Complex64], eps: f64) -> Vec<f64> {
    let rot = Complex64::from_polar(1.0, eps);
    let diff: Vec<Complex64> = mapped.iter().zip(psi).map(|(m, p)| rot * m - p).collect();
    diff.iter().map(|z| z.re).chain(diff.iter().map(|z| z.im)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm_sqr(c: &[Complex64]) -> f64 {
    c.iter().map(|z| z.norm_sqr()).sum()
}

/// Phase-invariant squared distance `min_chi |a - e^{i chi} b|^2`.
pub(crate) fn orbit_distance_sqr(a: &[Complex64], b: &[Complex64]) -> f64 {
    let cross: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    (norm_sqr(a) + norm_sqr(b) - 2.0 * cross.norm()).max(0.0)
}

/// Unknowns with the imaginary part of the pinned coefficient removed.
struct Pinned {
    dim: usize,
    pin: usize,
}

impl Pinned {
    fn reduce(&self, psi: &[Complex64], eps: f64) -> Vec<f64> {
        let mut z: Vec<f64> = psi.iter().map(|c| c.re).collect();
        z.extend(
            psi.iter()
                .enumerate()
                .filter(|(i, _)| *i != self.pin)
                .map(|(_, c)| c.im),
        );
        z.push(eps);
        z
    }

    fn expand(&self, z: &[f64]) -> (Vec<Complex64>, f64) {
        let d = self.dim;
        let mut coeffs = Vec::with_capacity(d);
        let mut k = d;
        for i in 0..d {
            let im = if i == self.pin {
                0.0
            } else {
                k += 1;
                z[k - 1]
            };
            coeffs.push(Complex64::new(z[i], im));
        }
        (coeffs, z[2 * d - 1])
    }
}

/// A solution of `e^{i eps} M(psi) = psi` with `|psi| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FixedPoint {
    pub coeffs: Vec<Complex64>,
    pub eps: f64,
    /// Largest component of the phase defect and the norm change.
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton iteration for a phase fixed point of `map`.
///
/// Each entry of `deflate` is a known solution; the residual is multiplied by
/// `prod_k (1 / d_k^2 + 1)`, with `d_k` the phase-invariant distance to it,
/// which keeps the iteration away from those roots. Convergence is judged
/// on the undeflated residual.
pub(crate) fn solve_fixed_point<M>(
    seed: &[Complex64],
    seed_eps: f64,
    map: M,
    opts: &NewtonOptions,
    deflate: &[Vec<Complex64>],
) -> Result<FixedPoint>
where
    M: Fn(&[Complex64]) -> Result<Vec<Complex64>> + Sync + Send,
{
    let scale = norm_sqr(seed).sqrt();
    if !(scale > 0.0) || !scale.is_finite() || !seed_eps.is_finite() {
        return Err(Error::param("seed", "must be finite and nonzero"));
    }
    let mut psi: Vec<Complex64> = seed.iter().map(|c| c / scale).collect();
    fix_gauge(&mut psi);
    let mut pin = 0;
    for (i, c) in psi.iter().enumerate() {
        if c.norm_sqr() > psi[pin].norm_sqr() {
            pin = i;
        }
    }
    let pinned = Pinned { dim: psi.len(), pin };

    // Plain residual (phase defect and norm anchor) and its deflated version.
    let evaluate = |z: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (psi, eps) = pinned.expand(z);
        let mapped = map(&psi)?;
        let mut f = phase_defect_slices(&psi, &mapped, eps);
        f.push(norm_sqr(&psi) - 1.0);
        let factor: f64 = deflate
            .iter()
            .map(|r| 1.0 / orbit_distance_sqr(&psi, r) + 1.0)
            .product();
        let deflated = f.iter().map(|x| x * factor).collect();
        Ok((f, deflated))
    };

    let mut z = pinned.reduce(&psi, seed_eps);
    let (mut f, mut fd) = evaluate(&z)?;
    let mut iterations = 0;
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();

    while max_abs(&f) >= opts.tol {
        if iterations == opts.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual: max_abs(&f),
            });
        }
        iterations += 1;
        let n = z.len();
        let h = opts.fd_step;
        let columns: Vec<Vec<f64>> = exec::map_range(n, |j| {
            let mut zj = z.clone();
            zj[j] += h;
            evaluate(&zj).map(|(_, fj)| fj.iter().zip(&fd).map(|(a, b)| (a - b) / h).collect())
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let mut jac = DMatrix::zeros(fd.len(), n);
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > RANK_TOL * smax) {
            return Err(Error::RankDeficient { ratio: smin / smax });
        }
        let delta = svd
            .solve(&-DVector::from_column_slice(&fd), 0.0)
            .map_err(|e| Error::Eigen(format!("least-squares solve failed: {e}")))?;

        let current = norm2(&fd);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
            let last_try = lambda < 1.0 / 16.0;
            match evaluate(&trial) {
                Ok((ft, fdt)) if last_try || norm2(&fdt) < current => {
                    z = trial;
                    f = ft;
                    fd = fdt;
                    break;
                }
                Ok(_) => {}
                Err(Error::BlowUp { .. }) if !last_try => {}
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
        }
        if !max_abs(&f).is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                residual: max_abs(&f),
            });
        }
    }

    let (psi, eps) = pinned.expand(&z);
    let scale = norm_sqr(&psi).sqrt();
    let psi: Vec<Complex64> = psi.iter().map(|c| c / scale).collect();
    let mapped = map(&psi)?;
    let mut full = phase_defect_slices(&psi, &mapped, eps);
    full.push(norm_sqr(&mapped) - norm_sqr(&psi));
    Ok(FixedPoint {
        coeffs: psi,
        eps,
        residual: max_abs(&full),
        iterations,
    })
}

/// Damped Newton iteration from `seed` (state and quasienergy) at the
/// nonlinearity of `prop`. The Jacobian is built from forward differences,
/// one period map per unknown.
pub fn newton_solve(
    seed: &WaveFunction,
    seed_eps: f64,
    prop: &Propagator,
    t0: f64,
    opts: &NewtonOptions,
) -> Result<NonlinearFloquetState> {
    newton_solve_deflated(seed, seed_eps, prop, t0, opts, &[])
}

/// As [`newton_solve`], steering away from the `known` states.
pub fn newton_solve_deflated(
    seed: &WaveFunction,
    seed_eps: f64,
    prop: &Propagator,
    t0: f64,
    opts: &NewtonOptions,
    known: &[WaveFunction],
) -> Result<NonlinearFloquetState> {
    if seed.dim() != prop.dim() {
        return Err(Error::DimensionMismatch {
            expected: prop.dim(),
            got: seed.dim(),
        });
    }
    if !seed.is_finite() {
        return Err(Error::param("seed", "must be finite"));
    }
    let map = |c: &[Complex64]| -> Result<Vec<Complex64>> {
        let psi = WaveFunction::from_coeffs(c.to_vec())?;
        period_map(prop, &psi, t0).map(WaveFunction::into_coeffs)
    };
    let deflate: Vec<Vec<Complex64>> = known.iter().map(|k| k.coeffs().to_vec()).collect();
    let fp = solve_fixed_point(seed.coeffs(), seed_eps, map, opts, &deflate)?;
    Ok(NonlinearFloquetState {
        state: WaveFunction::from_coeffs(fp.coeffs)?,
        quasienergy: fp.eps,
        g: prop.params().g,
        residual: fp.residual,
        iterations: fp.iterations,
    })
}

/// `∫_0^{2 pi} |psi|^4 dx`, exact for band-limited states.
pub fn quartic_integral(psi: &WaveFunction) -> f64 {
    let grid = SpectralGrid::new(psi.n_max(), SpectralGrid::dealiased_len(psi.n_max())).expect("dealiased grid");
    let mut buf = vec![Complex64::new(0.0, 0.0); grid.len()];
    grid.to_grid(psi.coeffs(), &mut buf);
    let sum: f64 = buf.iter().map(|u| u.norm_sqr().powi(2)).sum();
    sum / (TAU * grid.len() as f64)
}

/// States along one period, `samples + 1` points including both ends.
#[derive(Debug, Clone)]
pub struct Orbit {
    pub states: Vec<WaveFunction>,
    pub period: f64,
}

impl Orbit {
    pub fn sample(prop: &Propagator, psi: &WaveFunction, t0: f64, samples: usize) -> Result<Self> {
        Ok(Orbit {
            states: prop.sample_period(psi, t0, samples)?,
            period: prop.period(),
        })
    }

    /// Time-independent orbit, for tests and reference values.
    pub fn constant(psi: &WaveFunction, period: f64, samples: usize) -> Self {
        Orbit {
            states: vec![psi.clone(); samples + 1],
            period,
        }
    }

    /// `∫_0^T dt ∫ |phi|^4 dx`, trapezoidal in time.
    pub fn quartic_integral(&self) -> f64 {
        let q: Vec<f64> = exec::map_slice(&self.states, quartic_integral);
        let n = q.len() - 1;
        let inner: f64 = q[1..n].iter().sum();
        (inner + 0.5 * (q[0] + q[n])) * self.period / n as f64
    }

    pub fn start(&self) -> &WaveFunction {
        &self.states[0]
    }
}

/// First-order prediction `eps~ + (g / mu) ∫∫ |phi|^4`.
pub fn quasienergy_perturbative(orbit: &Orbit, g: f64, mu: f64, base_eps: f64) -> f64 {
    if g == 0.0 {
        return base_eps;
    }
    base_eps + g / mu * orbit.quartic_integral()
}

/// Squared overlaps of a state with two reference states at the start time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateWeights {
    pub a: f64,
    pub b: f64,
    /// Mass outside the span of the two reference states.
    pub outside: f64,
}

pub fn project_two_state(phi: &WaveFunction, phi1: &WaveFunction, phi2: &WaveFunction) -> TwoStateWeights {
    let a = phi1.inner(phi).norm_sqr();
    let b = phi2.inner(phi).norm_sqr();
    TwoStateWeights {
        a,
        b,
        outside: (phi.norm_sqr() - a - b).max(0.0),
    }
}

/// Two-state prediction for a nonlinear quasienergy. The weights are
/// renormalized to the two-state span before use.
pub fn quasienergy_two_state(weights: &TwoStateWeights, eps1: f64, eps2: f64, orbit: &Orbit, g: f64, mu: f64) -> f64 {
    let total = weights.a + weights.b;
    let (a, b) = if total > 0.0 {
        (weights.a / total, weights.b / total)
    } else {
        (0.5, 0.5)
    };
    let linear = a * eps1 + b * eps2;
    if g == 0.0 {
        linear
    } else {
        linear + g / mu * orbit.quartic_integral()
    }
}

/// Nonlinearity at which the first-order quasienergies of two linear states
/// meet.
pub fn critical_g(orbit1: &Orbit, orbit2: &Orbit, eps1: f64, eps2: f64, mu: f64) -> Result<f64> {
    let i1 = orbit1.quartic_integral();
    let i2 = orbit2.quartic_integral();
    let den = i1 - i2;
    if den.abs() <= 1e-12 * (i1.abs() + i2.abs()) {
        return Err(Error::DegeneratePair(den));
    }
    Ok(mu * (eps2 - eps1) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxG,
    Fold,
    ConvergenceFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxG => "max_g",
            Termination::Fold => "fold",
            Termination::ConvergenceFailure => "convergence_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<NonlinearFloquetState>,
    /// Period-averaged momentum per point.
    pub momenta: Vec<f64>,
    pub terminated_by: Termination,
}

impl Branch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> &NonlinearFloquetState {
        self.points.last().expect("branches hold their start point")
    }
}

/// Overlap floor between consecutive branch points.
pub const BRANCH_OVERLAP: f64 = 0.5;

/// Step refinement: a failed step is halved down to `dg / MAX_REFINE`.
pub const MAX_REFINE: f64 = 64.0;

/// Follow `start` to `g_max` in steps of `dg`, reseeding from a secant
/// prediction of the last two points. A step that fails is halved until it
/// falls below `dg / 64`; the branch then ends. The end counts as a fold when
/// the state was moving at least three times faster than its median speed
/// along the branch.
pub fn continue_in_g(
    start: &NonlinearFloquetState,
    g_max: f64,
    dg: f64,
    prop: &Propagator,
    t0: f64,
    opts: &NewtonOptions,
) -> Result<Branch> {
    if !(dg > 0.0) {
        return Err(Error::param("dg", "must be positive"));
    }
    let mut points = vec![start.clone()];
    let mut momenta = vec![state_momentum(start, prop, t0)?];
    let mut speeds: Vec<f64> = Vec::new();
    let mut step = dg;
    let min_step = dg / MAX_REFINE;
    let mut terminated_by = Termination::MaxG;

    while points.last().expect("nonempty").g < g_max {
        let last = points.last().expect("nonempty");
        let g_next = (last.g + step).min(g_max);
        let h = g_next - last.g;
        let (seed, seed_eps) = match points.len() {
            1 => (last.state.clone(), last.quasienergy),
            n => {
                let prev = &points[n - 2];
                let r = h / (last.g - prev.g);
                let aligned = align_phase(&prev.state, &last.state);
                let seed = last
                    .state
                    .combine(Complex64::new(1.0 + r, 0.0), &aligned, Complex64::new(-r, 0.0));
                (seed, last.quasienergy + r * (last.quasienergy - prev.quasienergy))
            }
        };
        let attempt = newton_solve(&seed, seed_eps, &prop.with_g(g_next)?, t0, opts)
            .ok()
            .filter(|s| s.state.overlap(&last.state) > BRANCH_OVERLAP);
        match attempt {
            Some(next) => {
                let aligned = align_phase(&next.state, &last.state);
                speeds.push(aligned.distance(&last.state) / h);
                momenta.push(state_momentum(&next, prop, t0)?);
                points.push(next);
                step = (2.0 * step).min(dg);
            }
            None if step / 2.0 >= min_step => step /= 2.0,
            None => {
                terminated_by = if accelerating(&speeds) || slope_reversed(&points) {
                    Termination::Fold
                } else {
                    Termination::ConvergenceFailure
                };
                break;
            }
        }
    }
    Ok(Branch {
        points,
        momenta,
        terminated_by,
    })
}

/// `psi` rotated by the global phase that best aligns it with `reference`.
pub fn align_phase(psi: &WaveFunction, reference: &WaveFunction) -> WaveFunction {
    let s = psi.inner(reference);
    let n = s.norm();
    if n == 0.0 {
        psi.clone()
    } else {
        psi.clone().scaled(s / n)
    }
}

fn accelerating(speeds: &[f64]) -> bool {
    if speeds.len() < 3 {
        return false;
    }
    let mut sorted = speeds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    *speeds.last().expect("nonempty") > 3.0 * median
}

fn slope_reversed(points: &[NonlinearFloquetState]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    let slope = |a: &NonlinearFloquetState, b: &NonlinearFloquetState| (b.quasienergy - a.quasienergy) / (b.g - a.g);
    slope(&points[n - 3], &points[n - 2]) * slope(&points[n - 2], &points[n - 1]) < 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BifurcationMarker {
    /// The branch ended in a fold at this g.
    Fold(f64),
    /// No turning point; g of the sharpest bend of ε(g).
    Bend(f64),
}

impl BifurcationMarker {
    pub fn g(self) -> f64 {
        match self {
            BifurcationMarker::Fold(g) | BifurcationMarker::Bend(g) => g,
        }
    }
}

/// Where the branch bifurcates: its fold if it has one, otherwise the
/// interior maximum of |d²ε/dg²|. `None` if the bend peaks at an end.
pub fn bifurcation_marker(branch: &Branch) -> Option<BifurcationMarker> {
    if branch.terminated_by == Termination::Fold {
        return Some(BifurcationMarker::Fold(branch.last().g));
    }
    let curv = branch_curvature(branch);
    if curv.len() < 3 {
        return None;
    }
    let (k, _) = curv
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("nonempty");
    if k == 0 || k + 1 == curv.len() {
        return None;
    }
    Some(BifurcationMarker::Bend(branch.points[k + 1].g))
}

/// Three-point second derivative of ε(g) at each interior point.
pub fn branch_curvature(branch: &Branch) -> Vec<f64> {
    branch
        .points
        .windows(3)
        .map(|w| {
            let (h1, h2) = (w[1].g - w[0].g, w[2].g - w[1].g);
            let d1 = (w[1].quasienergy - w[0].quasienergy) / h1;
            let d2 = (w[2].quasienergy - w[1].quasienergy) / h2;
            2.0 * (d2 - d1) / (h1 + h2)
        })
        .collect()
}

/// Period-averaged momentum of a converged state.
pub fn state_momentum(state: &NonlinearFloquetState, prop: &Propagator, t0: f64) -> Result<f64> {
    let p = prop.with_g(state.g)?;
    p.evolve_period_with_momentum(&state.state, t0).map(|(_, m)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::linear::{phase_distance, FloquetSpectrum};
    use crate::model::{DrivingField, ModelParams};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const N: usize = 6;

    fn prop(g: f64, theta: f64) -> Propagator {
        let field = DrivingField::lattice_reference(1.2, theta);
        let params = ModelParams::for_field(0.2, 1.0, g, N, &field, 128).unwrap();
        Propagator::new(&params, &field).unwrap()
    }

    fn free_prop(g: f64) -> Propagator {
        let field = DrivingField::new(0.0, 0.0, 3.0, 0.0, 0.0).unwrap();
        let params = ModelParams::for_field(0.2, 0.0, g, N, &field, 128).unwrap();
        Propagator::new(&params, &field).unwrap()
    }

    fn mix(a: i64, b: i64) -> WaveFunction {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        WaveFunction::plane_wave(a, N).unwrap().combine(
            Complex64::new(s, 0.0),
            &WaveFunction::plane_wave(b, N).unwrap(),
            Complex64::new(s, 0.0),
        )
    }

    #[test]
    fn pack_roundtrips_and_checks_length() {
        let psi = mix(1, -2);
        let (back, eps) = unpack(&pack(&psi, 0.7)).unwrap();
        assert_eq!(back, psi);
        assert_eq!(eps, 0.7);
        assert!(unpack(&[0.0; 6]).is_err());
        assert!(unpack(&[0.0; 5]).is_err());
    }

    #[test]
    fn quartic_integrals_of_simple_states() {
        let flat = WaveFunction::plane_wave(3, N).unwrap();
        assert!((quartic_integral(&flat) - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!((quartic_integral(&mix(0, 1)) - 3.0 / (4.0 * PI)).abs() < 1e-14);
        let orbit = Orbit::constant(&flat, 2.0, 16);
        assert!((orbit.quartic_integral() - 2.0 / (2.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn perturbative_shift_of_a_constant_orbit() {
        let orbit = Orbit::constant(&WaveFunction::plane_wave(0, N).unwrap(), 2.0, 8);
        let eps = quasienergy_perturbative(&orbit, 0.01, 0.2, -1.0);
        assert!((eps - (-1.0 + 0.01 * 2.0 / (2.0 * PI * 0.2))).abs() < 1e-14);
        assert_eq!(quasienergy_perturbative(&orbit, 0.0, 0.2, -1.0), -1.0);
    }

    #[test]
    fn plane_wave_fixed_point_is_exact() {
        // |n> stays a plane wave; its density is flat, so eps = T (mu n^2/2 + g/(2 pi mu)).
        let g = 0.05;
        let p = free_prop(g);
        let t = p.period();
        for n in [0i64, 2] {
            let psi = WaveFunction::plane_wave(n, N).unwrap();
            let want = t * (0.2 * (n * n) as f64 / 2.0 + g / (2.0 * PI * 0.2));
            let seed = psi
                .combine(Complex64::new(1.0, 0.0), &mix(1, -1), Complex64::new(1e-3, 0.0))
                .normalized();
            let s = newton_solve(&seed, want + 1e-3, &p, 0.0, &NewtonOptions::default()).unwrap();
            assert!(s.residual < 1e-9);
            assert!(s.state.overlap(&psi) > 1.0 - 1e-10);
            assert!(
                phase_distance(s.quasienergy, want) < 1e-9,
                "{} vs {want}",
                s.quasienergy
            );
        }
    }

    #[test]
    fn linear_states_are_immediate_fixed_points() {
        let p = prop(0.0, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p, 0.0).unwrap();
        for a in [0, 5, 9] {
            let s = newton_solve(
                &spec.states[a],
                spec.quasienergies[a],
                &p,
                0.0,
                &NewtonOptions::default(),
            )
            .unwrap();
            assert!(s.residual < 1e-9);
            assert!(s.iterations <= 2, "{}", s.iterations);
            assert!(s.state.overlap(&spec.states[a]) > 1.0 - 1e-10);
        }
    }

    #[test]
    fn period_map_matches_the_linear_operator() {
        let p = prop(0.0, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p, 0.0).unwrap();
        let a = 4;
        let mapped = period_map(&p, &spec.states[a], 0.0).unwrap();
        let want = spec.states[a]
            .clone()
            .scaled(Complex64::from_polar(1.0, -spec.quasienergies[a]));
        assert!(mapped.max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn residual_vanishes_on_fixed_points_for_any_phase() {
        let p = prop(0.0, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p, 0.0).unwrap();
        for phase in [0.0, 1.0, -2.5] {
            let psi = spec.states[2].clone().scaled(Complex64::from_polar(1.0, phase));
            let r = residual(&pack(&psi, spec.quasienergies[2]), &p, 0.0).unwrap();
            assert!(max_abs(&r) < 1e-10);
        }
        let r = residual(&pack(&spec.states[2], spec.quasienergies[2] + 0.1), &p, 0.0).unwrap();
        assert!(max_abs(&r) > 1e-3);
    }

    #[test]
    fn rephased_seed_converges_to_the_same_state() {
        let p = prop(0.002, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p.with_g(0.0).unwrap(), 0.0).unwrap();
        let opts = NewtonOptions::default();
        let a = newton_solve(&spec.states[3], spec.quasienergies[3], &p, 0.0, &opts).unwrap();
        let rotated = spec.states[3].clone().scaled(Complex64::from_polar(1.0, 2.0));
        let b = newton_solve(&rotated, spec.quasienergies[3], &p, 0.0, &opts).unwrap();
        assert!(a.state.overlap(&b.state) > 1.0 - 1e-8);
        assert!((a.quasienergy - b.quasienergy).abs() < 1e-8);
    }

    #[test]
    fn small_g_shift_matches_first_order() {
        let p0 = prop(0.0, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p0, 0.0).unwrap();
        let a = 6;
        let opts = NewtonOptions::default();
        let orbit = Orbit::sample(&p0, &spec.states[a], 0.0, 128).unwrap();
        let mut shifts = Vec::new();
        for g in [1e-5, 2e-5] {
            let s = newton_solve(
                &spec.states[a],
                spec.quasienergies[a],
                &p0.with_g(g).unwrap(),
                0.0,
                &opts,
            )
            .unwrap();
            shifts.push((s.quasienergy - spec.quasienergies[a], s.state.distance(&spec.states[a])));
        }
        let slope = shifts[0].0 / 1e-5;
        let want = orbit.quartic_integral() / 0.2;
        assert!((slope - want).abs() < 0.01 * want.abs(), "{slope} vs {want}");
        // The state moves linearly in g.
        let ratio = shifts[1].1 / shifts[0].1;
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn critical_g_of_crossing_lines() {
        let o1 = Orbit::constant(&WaveFunction::plane_wave(0, N).unwrap(), 2.0, 8);
        let o2 = Orbit::constant(&mix(0, 1), 2.0, 8);
        let g = critical_g(&o1, &o2, -1.0, -0.99, 0.2).unwrap();
        // The two lines eps_j + g I_j / mu meet at g.
        let e1 = quasienergy_perturbative(&o1, g, 0.2, -1.0);
        let e2 = quasienergy_perturbative(&o2, g, 0.2, -0.99);
        assert!((e1 - e2).abs() < 1e-12);
        assert!(g < 0.0);
        assert!(matches!(
            critical_g(&o1, &o1, -1.0, -0.99, 0.2),
            Err(Error::DegeneratePair(_))
        ));
    }

    #[test]
    fn two_state_weights() {
        let p0 = WaveFunction::plane_wave(0, N).unwrap();
        let p1 = WaveFunction::plane_wave(1, N).unwrap();
        let w = project_two_state(&p0, &p0, &p1);
        assert_eq!((w.a, w.b, w.outside), (1.0, 0.0, 0.0));
        let w = project_two_state(&mix(0, 1), &p0, &p1);
        assert!((w.a - 0.5).abs() < 1e-15 && (w.b - 0.5).abs() < 1e-15 && w.outside < 1e-15);
        let w = project_two_state(&mix(0, 2), &p0, &p1);
        assert!((w.outside - 0.5).abs() < 1e-15);
        let orbit = Orbit::constant(&p0, 2.0, 4);
        let eps = quasienergy_two_state(&w, -1.0, 1.0, &orbit, 0.0, 0.2);
        assert!((eps + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_range_continuation_is_a_single_point() {
        let p = prop(0.0, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p, 0.0).unwrap();
        let s = newton_solve(
            &spec.states[1],
            spec.quasienergies[1],
            &p,
            0.0,
            &NewtonOptions::default(),
        )
        .unwrap();
        let b = continue_in_g(&s, 0.0, 1e-3, &p, 0.0, &NewtonOptions::default()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.terminated_by, Termination::MaxG);
        assert!(continue_in_g(&s, 0.01, 0.0, &p, 0.0, &NewtonOptions::default()).is_err());
    }

    #[test]
    fn short_continuation_stays_smooth() {
        let p = prop(0.0, -1.6);
        let spec = FloquetSpectrum::from_propagator(&p, 0.0).unwrap();
        let s = newton_solve(
            &spec.states[1],
            spec.quasienergies[1],
            &p,
            0.0,
            &NewtonOptions::default(),
        )
        .unwrap();
        let b = continue_in_g(&s, 4e-4, 1e-4, &p, 0.0, &NewtonOptions::default()).unwrap();
        assert_eq!(b.terminated_by, Termination::MaxG);
        assert_eq!(b.len(), 5);
        assert_eq!(b.momenta.len(), 5);
        for w in b.points.windows(2) {
            assert!(w[1].g > w[0].g);
            assert!(w[1].state.overlap(&w[0].state) > 0.99);
            assert!(w[1].residual < 1e-9);
        }
    }

    fn synthetic(gs: &[f64], eps: impl Fn(f64) -> f64, end: Termination) -> Branch {
        let psi = WaveFunction::plane_wave(0, N).unwrap();
        let points: Vec<NonlinearFloquetState> = gs
            .iter()
            .map(|&g| NonlinearFloquetState {
                state: psi.clone(),
                quasienergy: eps(g),
                g,
                residual: 0.0,
                iterations: 0,
            })
            .collect();
        Branch {
            momenta: vec![0.0; points.len()],
            points,
            terminated_by: end,
        }
    }

    #[test]
    fn marker_finds_the_bend() {
        let gs: Vec<f64> = (0..41).map(|k| k as f64 * 0.025).collect();
        // Smoothed kink at g = 0.6.
        let b = synthetic(&gs, |g| 0.05 * ((g - 0.6) / 0.05).cosh().ln(), Termination::MaxG);
        match bifurcation_marker(&b) {
            Some(BifurcationMarker::Bend(g)) => assert!((g - 0.6).abs() < 0.03, "{g}"),
            other => panic!("{other:?}"),
        }
        let line = synthetic(&gs, |g| g * g, Termination::MaxG);
        let c = branch_curvature(&line);
        assert!(c.iter().all(|v| (v - 2.0).abs() < 1e-9));
        let folded = synthetic(&gs[..10], |g| g, Termination::Fold);
        assert_eq!(bifurcation_marker(&folded), Some(BifurcationMarker::Fold(gs[9])));
        assert_eq!(bifurcation_marker(&synthetic(&gs[..3], |g| g, Termination::MaxG)), None);
    }

    #[test]
    fn fold_detectors() {
        assert!(!accelerating(&[1.0, 1.0]));
        assert!(!accelerating(&[1.0, 1.1, 0.9, 2.0]));
        assert!(accelerating(&[1.0, 1.1, 0.9, 5.0]));
        let gs = [0.0, 0.1, 0.2];
        assert!(slope_reversed(
            &synthetic(&gs, |g| -(g - 0.1).abs(), Termination::MaxG).points
        ));
        assert!(!slope_reversed(&synthetic(&gs, |g| g * g, Termination::MaxG).points));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn random_seeds_fail_or_converge_honestly(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let coeffs = (0..2 * N + 1).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let psi = WaveFunction::from_coeffs(coeffs).unwrap().normalized();
            let p = prop(0.003, -1.6);
            let opts = NewtonOptions { max_iterations: 15, ..NewtonOptions::default() };
            if let Ok(s) = newton_solve(&psi, rng.random::<f64>() * 2.0 * PI - PI, &p, 0.0, &opts) {
                let r = residual(&pack(&s.state, s.quasienergy), &p, 0.0).unwrap();
                prop_assert!(max_abs(&r) < 1e-8);
                prop_assert!((s.state.norm_sqr() - 1.0).abs() < 1e-10);
            }
        }
    }
}
