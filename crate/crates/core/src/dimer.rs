//! Driven two-mode model
//!
//! ```text
//! i mu psi1' = C psi2 + g N1 psi1 + f(t) psi1
//! i mu psi2' = C psi1 + g N2 psi2 - f(t) psi2
//! f(t) = f1 sin(w t) + f2 sin(2 w t + theta)
//! ```
//!
//! integrated with fixed-step RK4 from `t = 0`. Periodic orbits are phase
//! fixed points of the one-period map with `N1 + N2 = 1`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::linear::wrap_phase;
use crate::floquet::nonlinear::{orbit_distance_sqr, solve_fixed_point, NewtonOptions, Termination, MAX_REFINE};

pub const DEFAULT_DIMER_STEPS: usize = 2048;
pub const IMBALANCE_SAMPLES: usize = 128;
/// Size of the imbalance kick used to look for symmetry-broken orbits.
pub const KICK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimerParams {
    #[serde(rename = "C", alias = "c")]
    pub c: f64,
    pub mu: f64,
    #[serde(default)]
    pub g: f64,
    pub f1: f64,
    pub f2: f64,
    pub omega: f64,
    pub theta: f64,
    #[serde(default = "default_steps")]
    pub steps_per_period: usize,
}

fn default_steps() -> usize {
    DEFAULT_DIMER_STEPS
}

impl DimerParams {
    /// `C = mu = f1 = f2 = 1`, `omega = 2 pi`.
    pub fn reference(theta: f64) -> Self {
        DimerParams {
            c: 1.0,
            mu: 1.0,
            g: 0.0,
            f1: 1.0,
            f2: 1.0,
            omega: TAU,
            theta,
            steps_per_period: DEFAULT_DIMER_STEPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.c, self.mu, self.g, self.f1, self.f2, self.omega, self.theta];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("dimer", "parameters must be finite"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::param("mu", "must be positive"));
        }
        if !(self.omega > 0.0) {
            return Err(Error::param("omega", "must be positive"));
        }
        if self.steps_per_period == 0 || self.steps_per_period % IMBALANCE_SAMPLES != 0 {
            return Err(Error::param(
                "steps_per_period",
                format!("must be a positive multiple of {IMBALANCE_SAMPLES}"),
            ));
        }
        Ok(())
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    pub fn dt(&self) -> f64 {
        self.period() / self.steps_per_period as f64
    }

    pub fn drive(&self, t: f64) -> f64 {
        self.f1 * (self.omega * t).sin() + self.f2 * (2.0 * self.omega * t + self.theta).sin()
    }

    /// The flow commutes with permutation, time reversal and conjugation when
    /// `f(-t) = -f(t)`, i.e. `sin theta = 0`.
    pub fn is_symmetric(&self) -> bool {
        self.f2 == 0.0 || self.theta.rem_euclid(PI).min(PI - self.theta.rem_euclid(PI)) < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimerState {
    pub psi1: Complex64,
    pub psi2: Complex64,
}

impl DimerState {
    pub fn new(psi1: Complex64, psi2: Complex64) -> Self {
        DimerState { psi1, psi2 }
    }

    /// `(1, 1) / sqrt 2`.
    pub fn in_phase() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        DimerState::new(a, a)
    }

    /// `(1, -1) / sqrt 2`.
    pub fn out_of_phase() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        DimerState::new(a, -a)
    }

    pub fn populations(&self) -> (f64, f64) {
        (self.psi1.norm_sqr(), self.psi2.norm_sqr())
    }

    pub fn norm(&self) -> f64 {
        self.psi1.norm_sqr() + self.psi2.norm_sqr()
    }

    pub fn as_array(&self) -> [Complex64; 2] {
        [self.psi1, self.psi2]
    }

    pub fn from_slice(c: &[Complex64]) -> Self {
        DimerState::new(c[0], c[1])
    }

    /// Sites exchanged.
    pub fn swapped(&self) -> Self {
        DimerState::new(self.psi2, self.psi1)
    }

    /// Sites exchanged and conjugated: the image under the symmetry of a
    /// time-reversal symmetric drive.
    pub fn mirrored(&self) -> Self {
        DimerState::new(self.psi2.conj(), self.psi1.conj())
    }

    /// Populations shifted by `+-delta` at fixed phases and total norm.
    pub fn kicked(&self, delta: f64) -> Self {
        let (n1, n2) = self.populations();
        let n = n1 + n2;
        let m1 = (n1 + delta * n).clamp(0.0, n);
        let m2 = n - m1;
        let rescale = |z: Complex64, old: f64, new: f64| {
            if old > 0.0 {
                z * (new / old).sqrt()
            } else {
                Complex64::new(new.sqrt(), 0.0)
            }
        };
        DimerState::new(rescale(self.psi1, n1, m1), rescale(self.psi2, n2, m2))
    }

    fn is_finite(&self) -> bool {
        self.psi1.is_finite() && self.psi2.is_finite()
    }

    fn axpy(&self, a: f64, k: &DimerState) -> DimerState {
        DimerState::new(self.psi1 + k.psi1 * a, self.psi2 + k.psi2 * a)
    }
}

/// Time derivatives of both amplitudes.
pub fn dimer_rhs(s: &DimerState, t: f64, p: &DimerParams) -> DimerState {
    let f = p.drive(t);
    let (n1, n2) = s.populations();
    let k = Complex64::new(0.0, -1.0 / p.mu);
    DimerState::new(
        k * (p.c * s.psi2 + (p.g * n1 + f) * s.psi1),
        k * (p.c * s.psi1 + (p.g * n2 - f) * s.psi2),
    )
}

pub fn rk4_step(s: &DimerState, t: f64, dt: f64, p: &DimerParams) -> DimerState {
    let k1 = dimer_rhs(s, t, p);
    let k2 = dimer_rhs(&s.axpy(0.5 * dt, &k1), t + 0.5 * dt, p);
    let k3 = dimer_rhs(&s.axpy(0.5 * dt, &k2), t + 0.5 * dt, p);
    let k4 = dimer_rhs(&s.axpy(dt, &k3), t + dt, p);
    DimerState::new(
        s.psi1 + (k1.psi1 + 2.0 * k2.psi1 + 2.0 * k3.psi1 + k4.psi1) * (dt / 6.0),
        s.psi2 + (k1.psi2 + 2.0 * k2.psi2 + 2.0 * k3.psi2 + k4.psi2) * (dt / 6.0),
    )
}

/// `n_steps` RK4 steps of size `dt` from `t_start`, calling `observe(k, state)`
/// before each step and after the last one.
pub fn dimer_run<F>(
    s: &DimerState,
    t_start: f64,
    dt: f64,
    n_steps: usize,
    p: &DimerParams,
    mut observe: F,
) -> Result<DimerState>
where
    F: FnMut(usize, &DimerState),
{
    let mut cur = *s;
    for k in 0..n_steps {
        observe(k, &cur);
        cur = rk4_step(&cur, t_start + k as f64 * dt, dt, p);
        if !cur.is_finite() {
            return Err(Error::BlowUp {
                t: t_start + (k + 1) as f64 * dt,
                step: k + 1,
            });
        }
    }
    observe(n_steps, &cur);
    Ok(cur)
}

/// Evolve over `[t_start, t_end]` with the configured step, rounded to an
/// integer step count.
pub fn dimer_propagate(s: &DimerState, t_start: f64, t_end: f64, p: &DimerParams) -> Result<DimerState> {
    p.validate()?;
    let dt = p.dt();
    let n = ((t_end - t_start) / dt).round();
    if !(n >= 0.0) {
        return Err(Error::param("t_end", "must not precede t_start"));
    }
    dimer_run(s, t_start, dt, n as usize, p, |_, _| {})
}

pub fn dimer_period_map(s: &DimerState, p: &DimerParams) -> Result<DimerState> {
    dimer_run(s, 0.0, p.dt(), p.steps_per_period, p, |_, _| {})
}

/// Period-averaged `N1 - N2`, trapezoidal over 128 samples.
pub fn imbalance(s: &DimerState, p: &DimerParams) -> Result<f64> {
    let stride = p.steps_per_period / IMBALANCE_SAMPLES;
    let mut acc = 0.0;
    dimer_run(s, 0.0, p.dt(), p.steps_per_period, p, |k, st| {
        if k % stride == 0 {
            let (n1, n2) = st.populations();
            let w = if k == 0 || k == p.steps_per_period { 0.5 } else { 1.0 };
            acc += w * (n1 - n2);
        }
    })?;
    Ok(acc / IMBALANCE_SAMPLES as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimerOrbit {
    pub state: DimerState,
    /// Phase lost per period, continuous along a branch.
    pub quasienergy: f64,
    pub g: f64,
    pub imbalance: f64,
    pub residual: f64,
}

impl DimerOrbit {
    /// Eigenphase per unit time.
    pub fn rate(&self, p: &DimerParams) -> f64 {
        self.quasienergy / p.period()
    }
}

/// Periodic orbit near `seed` at the nonlinearity in `p`.
pub fn dimer_orbit_solve(seed: &DimerState, seed_eps: f64, p: &DimerParams) -> Result<DimerOrbit> {
    solve_orbit(seed, seed_eps, p, &[])
}

/// As [`dimer_orbit_solve`], steering away from the `known` orbits.
pub fn dimer_orbit_solve_deflated(
    seed: &DimerState,
    seed_eps: f64,
    p: &DimerParams,
    known: &[DimerState],
) -> Result<DimerOrbit> {
    solve_orbit(seed, seed_eps, p, known)
}

fn solve_orbit(seed: &DimerState, seed_eps: f64, p: &DimerParams, known: &[DimerState]) -> Result<DimerOrbit> {
    p.validate()?;
    let map = |c: &[Complex64]| -> Result<Vec<Complex64>> {
        dimer_period_map(&DimerState::from_slice(c), p).map(|s| s.as_array().to_vec())
    };
    let deflate: Vec<Vec<Complex64>> = known.iter().map(|k| k.as_array().to_vec()).collect();
    let fp = solve_fixed_point(&seed.as_array(), seed_eps, map, &NewtonOptions::default(), &deflate)?;
    let state = DimerState::from_slice(&fp.coeffs);
    Ok(DimerOrbit {
        state,
        quasienergy: fp.eps,
        g: p.g,
        imbalance: imbalance(&state, p)?,
        residual: fp.residual,
    })
}

/// Linear Floquet orbits at `g = 0`, continued from the in-phase and
/// out-of-phase modes of the undriven dimer (in that order).
pub fn linear_orbits(p: &DimerParams) -> Result<[DimerOrbit; 2]> {
    let p = p.with_g(0.0);
    p.validate()?;
    let a = dimer_period_map(&DimerState::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)), &p)?;
    let b = dimer_period_map(&DimerState::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)), &p)?;
    // Columns of the one-period matrix.
    let m = [[a.psi1, b.psi1], [a.psi2, b.psi2]];
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let mut vectors = Vec::new();
    for lambda in [(tr + disc) / 2.0, (tr - disc) / 2.0] {
        let v = if (m[0][0] - lambda).norm() + m[0][1].norm() > (m[1][1] - lambda).norm() + m[1][0].norm() {
            (m[0][1], lambda - m[0][0])
        } else {
            (lambda - m[1][1], m[1][0])
        };
        let n = (v.0.norm_sqr() + v.1.norm_sqr()).sqrt();
        vectors.push((DimerState::new(v.0 / n, v.1 / n), -lambda.arg()));
    }
    let inp = DimerState::in_phase();
    let overlap = |s: &DimerState| (s.psi1.conj() * inp.psi1 + s.psi2.conj() * inp.psi2).norm();
    if overlap(&vectors[1].0) > overlap(&vectors[0].0) {
        vectors.swap(0, 1);
    }
    let orbit = |(s, eps): (DimerState, f64)| -> Result<DimerOrbit> {
        let orbit = dimer_orbit_solve(&s, wrap_phase(eps), &p)?;
        Ok(orbit)
    };
    Ok([orbit(vectors[0])?, orbit(vectors[1])?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bifurcation {
    Pitchfork,
    SaddleNode,
    None,
}

impl Bifurcation {
    pub fn as_str(self) -> &'static str {
        match self {
            Bifurcation::Pitchfork => "pitchfork",
            Bifurcation::SaddleNode => "saddle-node",
            Bifurcation::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DimerBranch {
    /// Ordered by increasing `g`.
    pub orbits: Vec<DimerOrbit>,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone)]
pub struct DimerContinuation {
    /// Branch continued from the starting orbit.
    pub main: DimerBranch,
    /// Orbits found off the main branch, each followed in both directions.
    pub spawned: Vec<DimerBranch>,
    pub classification: Bifurcation,
    /// Lowest `g` at which the spawned orbits exist.
    pub critical_g: Option<f64>,
}

/// Orbits closer than this (phase-invariant distance) count as the same.
const SAME_ORBIT: f64 = 1e-4;
/// A spawned branch born closer than this to the main branch emanates from it.
const ATTACHED: f64 = 0.05;

/// Follow `start` in `g` up to `g_max` and classify what branches off it.
///
/// At every point of the main branch, kicked seeds (`+-KICK` imbalance) are
/// solved with the main orbit deflated. The first orbits found this way are
/// followed downward in `g` until they end. If the pair ends on the main
/// branch with opposite imbalances it is a pitchfork; if a branch ends in a
/// fold away from the main branch and a partner orbit with the opposite
/// `d eps / d g` is found there, it is a saddle-node.
pub fn dimer_continue(start: &DimerOrbit, g_max: f64, dg: f64, p: &DimerParams) -> Result<DimerContinuation> {
    p.validate()?;
    if !(dg > 0.0) {
        return Err(Error::param("dg", "must be positive"));
    }
    let main = follow(start, g_max, dg, p, &[])?;
    let mut spawned: Vec<DimerBranch> = Vec::new();
    let mut seeds_found: Vec<DimerOrbit> = Vec::new();
    for orbit in main.orbits.iter().filter(|o| o.g > 0.0) {
        seeds_found = spawn(orbit, p)?;
        if !seeds_found.is_empty() {
            break;
        }
    }
    if seeds_found.is_empty() {
        return Ok(DimerContinuation {
            main,
            spawned,
            classification: Bifurcation::None,
            critical_g: None,
        });
    }

    for seed in &seeds_found {
        let down = follow(seed, 0.0, -dg, p, &[&main])?;
        let up = follow(seed, g_max, dg, p, &[&main])?;
        let mut orbits = down.orbits;
        orbits.extend(up.orbits.into_iter().skip(1));
        spawned.push(DimerBranch {
            orbits,
            terminated_by: down.terminated_by,
        });
    }

    let classification = classify(&main, &mut spawned, g_max, dg, p)?;
    let critical_g = spawned.iter().map(|b| b.orbits[0].g).min_by(f64::total_cmp);
    Ok(DimerContinuation {
        main,
        spawned,
        classification,
        critical_g,
    })
}

fn distance(a: &DimerState, b: &DimerState) -> f64 {
    orbit_distance_sqr(&a.as_array(), &b.as_array()).sqrt()
}

fn overlap(a: &DimerState, b: &DimerState) -> f64 {
    (a.psi1.conj() * b.psi1 + a.psi2.conj() * b.psi2).norm()
}

/// Natural continuation from `start` towards `g_end` in steps of `dg`
/// (negative to go down), halving failed steps down to `|dg| / 64`.
/// The orbits of the `avoid` branches at each new `g` are deflated, so the
/// continuation ends where it would merge into one of them.
fn follow(start: &DimerOrbit, g_end: f64, dg: f64, p: &DimerParams, avoid: &[&DimerBranch]) -> Result<DimerBranch> {
    let dir = dg.signum();
    let mut orbits = vec![*start];
    let mut step = dg.abs();
    let min_step = dg.abs() / MAX_REFINE;
    let mut terminated_by = Termination::MaxG;
    let mut speeds: Vec<f64> = Vec::new();
    loop {
        let last = *orbits.last().expect("nonempty");
        if dir * (g_end - last.g) <= 0.0 {
            break;
        }
        let g_next = if dir > 0.0 {
            (last.g + step).min(g_end)
        } else {
            (last.g - step).max(g_end)
        };
        let (seed, seed_eps) = match orbits.len() {
            1 => (last.state, last.quasienergy),
            n => {
                let prev = orbits[n - 2];
                let r = (g_next - last.g) / (last.g - prev.g);
                let phase = {
                    let s = prev.state.psi1.conj() * last.state.psi1 + prev.state.psi2.conj() * last.state.psi2;
                    if s.norm() > 0.0 {
                        s / s.norm()
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                };
                let aligned = DimerState::new(prev.state.psi1 * phase, prev.state.psi2 * phase);
                (
                    DimerState::new(
                        last.state.psi1 * (1.0 + r) - aligned.psi1 * r,
                        last.state.psi2 * (1.0 + r) - aligned.psi2 * r,
                    ),
                    last.quasienergy + r * (last.quasienergy - prev.quasienergy),
                )
            }
        };
        let pg = p.with_g(g_next);
        let known: Vec<DimerState> = avoid
            .iter()
            .filter_map(|b| orbit_at(b, g_next, p))
            .map(|o| o.state)
            .collect();
        let attempt = dimer_orbit_solve_deflated(&seed, seed_eps, &pg, &known)
            .ok()
            .filter(|o| known.iter().all(|k| distance(&o.state, k) > SAME_ORBIT))
            .filter(|o| overlap(&o.state, &last.state) > 0.5 && (o.quasienergy - last.quasienergy).abs() < 1.0);
        match attempt {
            Some(next) => {
                speeds.push(distance(&next.state, &last.state) / (g_next - last.g).abs());
                orbits.push(next);
                step = (2.0 * step).min(dg.abs());
            }
            None if step / 2.0 >= min_step => step /= 2.0,
            None => {
                terminated_by = if is_accelerating(&speeds) {
                    Termination::Fold
                } else {
                    Termination::ConvergenceFailure
                };
                break;
            }
        }
    }
    if dir < 0.0 {
        orbits.reverse();
    }
    Ok(DimerBranch { orbits, terminated_by })
}

/// Orbit of branch `b` at `g`, re-solved from the nearest stored point.
fn orbit_at(b: &DimerBranch, g: f64, p: &DimerParams) -> Option<DimerOrbit> {
    let near = b
        .orbits
        .iter()
        .min_by(|x, y| (x.g - g).abs().total_cmp(&(y.g - g).abs()))?;
    if near.g == g {
        return Some(*near);
    }
    dimer_orbit_solve(&near.state, near.quasienergy, &p.with_g(g)).ok()
}

fn is_accelerating(speeds: &[f64]) -> bool {
    if speeds.len() < 3 {
        return false;
    }
    let mut sorted = speeds.to_vec();
    sorted.sort_by(f64::total_cmp);
    *speeds.last().expect("nonempty") > 3.0 * sorted[sorted.len() / 2]
}

/// Distinct orbits reached from `+-KICK` seeds around `orbit`, with `orbit`
/// deflated.
fn spawn(orbit: &DimerOrbit, p: &DimerParams) -> Result<Vec<DimerOrbit>> {
    let pg = p.with_g(orbit.g);
    let mut known = vec![orbit.state];
    let mut found: Vec<DimerOrbit> = Vec::new();
    for sign in [1.0, -1.0] {
        let seed = orbit.state.kicked(sign * KICK);
        if let Ok(o) = dimer_orbit_solve_deflated(&seed, orbit.quasienergy, &pg, &known) {
            let fresh = known.iter().all(|k| distance(&o.state, k) > SAME_ORBIT);
            // Only orbits in the neighbourhood of the parent count as offspring.
            if fresh && (o.quasienergy - orbit.quasienergy).abs() < 1.0 {
                known.push(o.state);
                found.push(o);
            }
        }
    }
    Ok(found)
}

fn classify(
    main: &DimerBranch,
    spawned: &mut Vec<DimerBranch>,
    g_max: f64,
    dg: f64,
    p: &DimerParams,
) -> Result<Bifurcation> {
    let main_at = |g: f64| -> Option<&DimerOrbit> {
        main.orbits
            .iter()
            .min_by(|a, b| (a.g - g).abs().total_cmp(&(b.g - g).abs()))
    };

    // Pitchfork: two offspring born on the main branch with opposite
    // imbalance relative to it.
    if spawned.len() >= 2 {
        let attached: Vec<&DimerBranch> = spawned
            .iter()
            .filter(|b| {
                let first = b.orbits[0];
                main_at(first.g).is_some_and(|m| distance(&first.state, &m.state) < ATTACHED)
            })
            .collect();
        if attached.len() >= 2 {
            let base = main_at(attached[0].orbits[0].g).map(|m| m.imbalance).unwrap_or(0.0);
            let tail = |b: &DimerBranch| b.orbits.last().expect("nonempty").imbalance - base;
            if tail(attached[0]) * tail(attached[1]) < 0.0 {
                return Ok(Bifurcation::Pitchfork);
            }
        }
    }

    // Saddle-node: a branch that ends in a fold off the main branch, with a
    // partner orbit on the far side of the turning point.
    for k in 0..spawned.len() {
        let first = spawned[k].orbits[0];
        let detached = main_at(first.g).is_some_and(|m| distance(&first.state, &m.state) >= ATTACHED);
        if !detached || first.g <= 0.0 {
            continue;
        }
        let slope = branch_slope(&spawned[k]);
        let probe_g = first.g + dg / MAX_REFINE;
        let pg = p.with_g(probe_g);
        let mut known: Vec<DimerState> = spawned[k]
            .orbits
            .iter()
            .filter(|o| (o.g - probe_g).abs() <= dg)
            .map(|o| o.state)
            .collect();
        known.push(first.state);
        for sign in [1.0, -1.0] {
            let seed = first.state.kicked(sign * KICK);
            let Ok(partner) = dimer_orbit_solve_deflated(&seed, first.quasienergy, &pg, &known) else {
                continue;
            };
            if distance(&partner.state, &first.state) > 0.5 {
                continue;
            }
            let partner_branch = follow(&partner, g_max.max(probe_g), dg, p, &[main, &spawned[k]])?;
            let partner_slope = branch_slope(&partner_branch);
            if slope * partner_slope < 0.0 || (partner.quasienergy - first.quasienergy) * slope < 0.0 {
                let already = spawned.iter().any(|b| {
                    b.orbits
                        .iter()
                        .any(|o| distance(&o.state, &partner.state) < 1e-3 && (o.g - partner.g).abs() < 1e-12)
                });
                if !already {
                    spawned.push(partner_branch);
                }
                return Ok(Bifurcation::SaddleNode);
            }
        }
    }
    Ok(Bifurcation::None)
}

/// `d eps / d g` over the first two points of a branch.
fn branch_slope(b: &DimerBranch) -> f64 {
    match b.orbits.as_slice() {
        [a, c, ..] => (c.quasienergy - a.quasienergy) / (c.g - a.g),
        _ => 0.0,
    }
}
