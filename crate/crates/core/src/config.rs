//! TOML run configuration. Every section is checked up front and all
//! problems are reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{ClassifyThresholds, HusimiSpec};
use crate::dimer::{DimerParams, DEFAULT_DIMER_STEPS};
use crate::error::{Error, Result};
use crate::model::{DrivingField, ModelParams, DEFAULT_STEPS_PER_PERIOD};
use crate::transport::{ScanAxis, DEFAULT_PERIODS, DEFAULT_PLATEAU_TOL, MIN_PERIODS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mu: f64,
    #[serde(default = "one")]
    pub v0: f64,
    #[serde(default)]
    pub g: f64,
    pub n_max: usize,
    /// Either `dt` or `steps_per_period`; the latter wins if both are absent
    /// (default 1024).
    pub dt: Option<f64>,
    pub steps_per_period: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_points: usize,
    /// Start-time samples for the averaged linear current; 0 skips it.
    #[serde(default)]
    pub t0_samples: usize,
    /// Plane-wave index of the initial state for currents.
    #[serde(default)]
    pub initial_n: i64,
    /// Emit per-state Husimi grids for the first grid point.
    #[serde(default)]
    pub husimi: bool,
    /// Write every eigenstate at every grid point as a state file.
    #[serde(default)]
    pub dump_states: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinueSection {
    /// Position of the seed in the linear spectrum, sorted by quasienergy.
    pub band: Option<usize>,
    /// Second state for the two-state columns and the critical g.
    pub partner: Option<usize>,
    pub g_max: f64,
    #[serde(default = "default_dg")]
    pub dg: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_dg() -> f64 {
    1e-4
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub axis: ScanAxis,
    /// Explicit grid; for the `t0` axis an empty grid means `t0_points`
    /// equally spaced start times over one period.
    #[serde(default)]
    pub values: Vec<f64>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    #[serde(default = "default_t0_points")]
    pub t0_points: usize,
    #[serde(default = "default_periods")]
    pub n_periods: usize,
    /// Keep doubling past `n_periods` up to this length until the plateau
    /// test passes; defaults to `n_periods`.
    pub max_periods: Option<usize>,
    #[serde(default = "default_plateau")]
    pub plateau_tol: f64,
    #[serde(default)]
    pub initial_n: i64,
}

fn default_t0_points() -> usize {
    16
}

fn default_periods() -> usize {
    DEFAULT_PERIODS
}

fn default_plateau() -> f64 {
    DEFAULT_PLATEAU_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimerSection {
    #[serde(rename = "C")]
    pub c: f64,
    pub mu: f64,
    #[serde(default)]
    pub g: f64,
    pub f1: f64,
    pub f2: f64,
    pub omega: f64,
    pub theta: f64,
    #[serde(default = "default_dimer_steps")]
    pub steps_per_period: usize,
    pub g_max: f64,
    #[serde(default = "default_dimer_dg")]
    pub dg: f64,
}

fn default_dimer_steps() -> usize {
    DEFAULT_DIMER_STEPS
}

fn default_dimer_dg() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelSection>,
    pub field: Option<DrivingField>,
    pub spectrum: Option<SpectrumSection>,
    #[serde(rename = "continue")]
    pub continuation: Option<ContinueSection>,
    pub scan: Option<ScanSection>,
    pub dimer: Option<DimerSection>,
    #[serde(default)]
    pub husimi: HusimiSpec,
    #[serde(default)]
    pub classify: ClassifyThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    FloquetSpectrum,
    Continue,
    CurrentScan,
    Dimer,
    Husimi,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::FloquetSpectrum => "floquet-spectrum",
            Command::Continue => "continue",
            Command::CurrentScan => "current-scan",
            Command::Dimer => "dimer",
            Command::Husimi => "husimi",
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msgs) => {
                Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect())
            }
            other => other,
        })
    }

    /// Canonical TOML of the resolved config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Check everything `command` needs, listing every offending key.
    pub fn validate(&self, command: Command) -> Result<()> {
        let mut errs = Vec::new();
        let lattice = !matches!(command, Command::Dimer | Command::Husimi);
        if lattice {
            match (&self.model, &self.field) {
                (Some(_), Some(_)) => {
                    if let Err(e) = self.model_params() {
                        errs.push(format!("model: {e}"));
                    }
                }
                (m, f) => {
                    if m.is_none() {
                        errs.push("model: section missing".into());
                    }
                    if f.is_none() {
                        errs.push("field: section missing".into());
                    }
                }
            }
            if let Some(f) = &self.field {
                if let Err(e) = f.validate() {
                    errs.push(format!("field: {e}"));
                }
            }
        }
        match command {
            Command::FloquetSpectrum => match &self.spectrum {
                None => errs.push("spectrum: section missing".into()),
                Some(s) => check_spectrum(s, &mut errs),
            },
            Command::Continue => match &self.continuation {
                None => errs.push("continue: section missing".into()),
                Some(c) => check_continue(c, self.model.as_ref(), &mut errs),
            },
            Command::CurrentScan => match &self.scan {
                None => errs.push("scan: section missing".into()),
                Some(s) => check_scan(s, &mut errs),
            },
            Command::Dimer => match &self.dimer {
                None => errs.push("dimer: section missing".into()),
                Some(d) => {
                    if let Err(e) = self.dimer_params().and_then(|p| p.validate()) {
                        errs.push(format!("dimer: {e}"));
                    }
                    if !(d.g_max.is_finite() && d.g_max >= d.g) {
                        errs.push("dimer.g_max: must be finite and >= dimer.g".into());
                    }
                    if !(d.dg > 0.0) {
                        errs.push("dimer.dg: must be positive".into());
                    }
                }
            },
            Command::Husimi => {}
        }
        if matches!(command, Command::Husimi | Command::FloquetSpectrum) {
            if let Err(e) = self.husimi.validate() {
                errs.push(format!("husimi: {e}"));
            }
        }
        if !(self.classify.momentum > 0.0 && self.classify.ipr_ratio > 0.0) {
            errs.push("classify: thresholds must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn field(&self) -> Result<DrivingField> {
        self.field
            .ok_or_else(|| Error::Config(vec!["field: section missing".into()]))
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["model: section missing".into()]))?;
        let field = self.field()?;
        let p = match (m.dt, m.steps_per_period) {
            (Some(_), Some(_)) => return Err(Error::param("dt", "give either dt or steps_per_period, not both")),
            (Some(dt), None) => ModelParams::new(m.mu, m.v0, m.g, m.n_max, dt)?,
            (None, steps) => ModelParams::for_field(
                m.mu,
                m.v0,
                m.g,
                m.n_max,
                &field,
                steps.unwrap_or(DEFAULT_STEPS_PER_PERIOD),
            )?,
        };
        p.steps_per_period(&field)?;
        Ok(p)
    }

    pub fn dimer_params(&self) -> Result<DimerParams> {
        let d = self
            .dimer
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["dimer: section missing".into()]))?;
        Ok(DimerParams {
            c: d.c,
            mu: d.mu,
            g: d.g,
            f1: d.f1,
            f2: d.f2,
            omega: d.omega,
            theta: d.theta,
            steps_per_period: d.steps_per_period,
        })
    }
}

fn check_spectrum(s: &SpectrumSection, errs: &mut Vec<String>) {
    if s.theta_points == 0 {
        errs.push("spectrum.theta_points: must be at least 1".into());
    }
    if !(s.theta_min.is_finite() && s.theta_max.is_finite()) {
        errs.push("spectrum.theta_min/theta_max: must be finite".into());
    } else if s.theta_points > 1 && s.theta_max <= s.theta_min {
        errs.push("spectrum.theta_max: must exceed theta_min".into());
    }
    if s.t0_samples != 0 && s.t0_samples < 8 {
        errs.push("spectrum.t0_samples: use 0 or at least 8".into());
    }
}

fn check_continue(c: &ContinueSection, model: Option<&ModelSection>, errs: &mut Vec<String>) {
    if let (Some(b), Some(m)) = (c.band, model) {
        if b >= 2 * m.n_max + 1 {
            errs.push(format!(
                "continue.band: {b} outside the {}-state spectrum",
                2 * m.n_max + 1
            ));
        }
    }
    if let (Some(b), Some(m)) = (c.partner, model) {
        if b >= 2 * m.n_max + 1 {
            errs.push(format!(
                "continue.partner: {b} outside the {}-state spectrum",
                2 * m.n_max + 1
            ));
        }
    }
    if c.partner.is_some() && c.partner == c.band {
        errs.push("continue.partner: must differ from band".into());
    }
    if !(c.g_max.is_finite()) {
        errs.push("continue.g_max: must be finite".into());
    }
    if !(c.dg > 0.0) {
        errs.push("continue.dg: must be positive".into());
    }
    if !(c.tol > 0.0) {
        errs.push("continue.tol: must be positive".into());
    }
}

fn check_scan(s: &ScanSection, errs: &mut Vec<String>) {
    let ranged = s.start.is_some() || s.stop.is_some() || s.points.is_some();
    if ranged && !s.values.is_empty() {
        errs.push("scan.values: give either values or start/stop/points".into());
    }
    if ranged {
        match (s.start, s.stop, s.points) {
            (Some(a), Some(b), Some(n)) if a.is_finite() && b.is_finite() && n >= 1 => {}
            _ => errs.push("scan.start/stop/points: all three required, finite, points >= 1".into()),
        }
    }
    if !ranged && s.values.is_empty() && s.axis != ScanAxis::T0 {
        errs.push("scan.values: empty grid".into());
    }
    if s.axis == ScanAxis::T0 && s.t0_points == 0 {
        errs.push("scan.t0_points: must be positive".into());
    }
    if s.values.iter().any(|v| !v.is_finite()) {
        errs.push("scan.values: must be finite".into());
    }
    if s.n_periods < MIN_PERIODS {
        errs.push(format!("scan.n_periods: must be at least {MIN_PERIODS}"));
    }
    if let Some(m) = s.max_periods {
        if m < s.n_periods {
            errs.push("scan.max_periods: must be at least n_periods".into());
        }
    }
    if !(s.plateau_tol > 0.0) {
        errs.push("scan.plateau_tol: must be positive".into());
    }
}

impl ScanSection {
    /// Resolved grid; the `t0` default spans one period of `period`.
    pub fn grid(&self, period: f64) -> Vec<f64> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        match (self.start, self.stop, self.points) {
            (Some(a), Some(b), Some(n)) => linspace(a, b, n),
            _ => crate::transport::t0_grid(period, self.t0_points),
        }
    }
}

impl SpectrumSection {
    pub fn grid(&self) -> Vec<f64> {
        linspace(self.theta_min, self.theta_max, self.theta_points)
    }
}

/// `n` points from `a` to `b` inclusive (`[a]` when `n == 1`).
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}
