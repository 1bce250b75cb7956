//! Subcommands behind the `ratchet` binary. Each command validates the full
//! config, writes its tables under the output directory and finishes with a
//! `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{classify_state, husimi, Cell, ClassifyThresholds, HusimiSpec, Kind, Schema, TableWriter};
use crate::config::{Command, Config};
use crate::dimer::{dimer_continue, linear_orbits, DimerBranch};
use crate::error::{Error, Result};
use crate::exec;
use crate::floquet::linear::t0_currents;
use crate::floquet::nonlinear::{bifurcation_marker, BifurcationMarker};
use crate::floquet::{
    continue_in_g, critical_g, newton_solve, period_map, project_two_state, quasienergy_perturbative,
    quasienergy_two_state, track_bands, FloquetSpectrum, NewtonOptions, Orbit, Termination,
};
use crate::spectral::{Propagator, StateRecord, WaveFunction};
use crate::transport::{scan, ScanSpec};

pub const ORBIT_SAMPLES: usize = crate::floquet::nonlinear::ORBIT_SAMPLES;

#[derive(Debug, Parser)]
#[command(
    name = "ratchet",
    version,
    about = "Floquet states and directed transport of a driven condensate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Quasienergy bands over a theta grid, with state labels and currents.
    FloquetSpectrum(Common),
    /// Continue a Floquet state in g.
    Continue(Common),
    /// Running-average currents over a theta, g or t0 grid.
    CurrentScan(Common),
    /// Dimer orbit branches and their bifurcation.
    Dimer(Common),
    /// Husimi density of a stored state.
    Husimi(Common),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// State file to start from (`continue`, `husimi`).
    #[arg(long)]
    pub seed_state: Option<PathBuf>,
}

impl Sub {
    pub fn parts(&self) -> (Command, &Common) {
        match self {
            Sub::FloquetSpectrum(c) => (Command::FloquetSpectrum, c),
            Sub::Continue(c) => (Command::Continue, c),
            Sub::CurrentScan(c) => (Command::CurrentScan, c),
            Sub::Dimer(c) => (Command::Dimer, c),
            Sub::Husimi(c) => (Command::Husimi, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Partial,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Partial => 2,
            Status::Failed => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub ratchet: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub outputs: Vec<String>,
    pub wall_time: f64,
    pub versions: Versions,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Files written by a command, relative to the output directory.
#[derive(Debug, Default)]
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    partial: bool,
}

impl Outputs {
    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(p)
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let (command, common) = cli.command.parts();
    if let Some(n) = common.workers {
        if !exec::set_workers(n) {
            log::warn!("worker count already fixed at {}", exec::workers());
        }
    }
    let clock = Instant::now();
    let mut outputs = Outputs {
        dir: common.out.clone(),
        ..Outputs::default()
    };
    let (hash, result) = match Config::load(&common.config) {
        Ok(cfg) => {
            let hash = cfg.hash();
            (
                hash,
                cfg.validate(command)
                    .and_then(|_| dispatch(command, &cfg, common, &mut outputs)),
            )
        }
        Err(e) => (raw_hash(&common.config), Err(e)),
    };
    let (status, error) = match &result {
        Ok(()) if outputs.partial => (Status::Partial, None),
        Ok(()) => (Status::Ok, None),
        Err(e) => (Status::Failed, Some(e.to_string())),
    };
    if let Some(e) = &error {
        eprintln!("error: {e}");
    }
    let manifest = RunManifest {
        command: command.as_str().to_string(),
        config_hash: hash,
        outputs: outputs.files.clone(),
        wall_time: clock.elapsed().as_secs_f64(),
        versions: Versions {
            ratchet: env!("CARGO_PKG_VERSION").to_string(),
        },
        status,
        error,
    };
    if let Err(e) = write_manifest(&common.out, &manifest) {
        eprintln!("error: {e}");
        return Status::Failed.exit_code();
    }
    status.exit_code()
}

fn raw_hash(path: &Path) -> String {
    let bytes = fs::read(path).unwrap_or_default();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(m)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn dispatch(command: Command, cfg: &Config, common: &Common, out: &mut Outputs) -> Result<()> {
    fs::create_dir_all(&out.dir).map_err(|e| Error::io(format!("creating {}", out.dir.display()), e))?;
    match command {
        Command::FloquetSpectrum => cmd_floquet_spectrum(cfg, out),
        Command::Continue => cmd_continue(cfg, common.seed_state.as_deref(), out),
        Command::CurrentScan => cmd_current_scan(cfg, out),
        Command::Dimer => cmd_dimer(cfg, out),
        Command::Husimi => cmd_husimi(cfg, common.seed_state.as_deref(), out),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_husimi(psi: &WaveFunction, spec: &HusimiSpec, mu: f64, stem: &str, out: &mut Outputs) -> Result<f64> {
    let h = husimi(psi, spec, mu)?;
    let schema = Schema::new(&[("x", Kind::Float), ("p", Kind::Float), ("h", Kind::Float)]);
    let mut rows = Vec::with_capacity(h.values.len());
    for (i, &x) in h.x_grid.iter().enumerate() {
        for (j, &p) in h.p_grid.iter().enumerate() {
            rows.push(vec![Cell::from(x), Cell::from(p), Cell::from(h.at(i, j))]);
        }
    }
    crate::analysis::emit_table(&schema, &rows, &out.path(&format!("{stem}.csv"))?)?;
    h.sidecar().save(&out.path(&format!("{stem}.json"))?)?;
    Ok(h.relative_ipr())
}

fn classify(
    psi: &WaveFunction,
    momentum: f64,
    spec: &HusimiSpec,
    mu: f64,
    th: &ClassifyThresholds,
) -> Result<&'static str> {
    let h = husimi(psi, spec, mu)?;
    Ok(classify_state(momentum, &h, th).as_str())
}

fn cmd_floquet_spectrum(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let spec = cfg.spectrum.as_ref().expect("validated");
    let params = cfg.model_params()?.with_g(0.0);
    let field = cfg.field()?;
    let grid = spec.grid();
    let bands = track_bands(&grid, &params, &field, field.t0)?;

    let schema = Schema::new(&[
        ("theta", Kind::Float),
        ("band", Kind::Int),
        ("quasienergy", Kind::Float),
        ("momentum", Kind::Float),
        ("class", Kind::Text),
    ]);
    let mut w = TableWriter::create(schema, &out.path("bands.csv")?)?;
    for (k, &theta) in grid.iter().enumerate() {
        let labels: Vec<Result<&str>> = exec::map_range(bands.n_bands(), |b| {
            classify(
                &bands.states[b][k],
                bands.momenta[b][k],
                &cfg.husimi,
                params.mu,
                &cfg.classify,
            )
        });
        for (b, label) in labels.into_iter().enumerate() {
            w.push(&[
                Cell::from(theta),
                Cell::from(b),
                Cell::from(bands.quasienergies[b][k]),
                Cell::from(bands.momenta[b][k]),
                Cell::from(label?),
            ])?;
        }
    }

    let gaps = bands.all_min_gaps();
    let schema = Schema::new(&[
        ("band_a", Kind::Int),
        ("band_b", Kind::Int),
        ("min_gap", Kind::Float),
        ("theta", Kind::Float),
    ]);
    let rows: Vec<Vec<Cell>> = gaps
        .iter()
        .map(|g| {
            vec![
                Cell::from(g.band_a),
                Cell::from(g.band_b),
                Cell::from(g.gap),
                Cell::from(g.theta),
            ]
        })
        .collect();
    crate::analysis::emit_table(&schema, &rows, &out.path("gaps.csv")?)?;

    if spec.t0_samples > 0 {
        let initial = WaveFunction::plane_wave(spec.initial_n, params.n_max)?;
        let schema = Schema::new(&[("theta", Kind::Float), ("current", Kind::Float), ("error", Kind::Text)]);
        let mut w = TableWriter::create(schema, &out.path("currents.csv")?)?;
        let currents = exec::map_slice(&grid, |&theta| {
            t0_currents(theta, &params, &field, &initial, spec.t0_samples)
        });
        for (&theta, j) in grid.iter().zip(currents) {
            match j {
                Ok(js) => {
                    let mean = js.iter().sum::<f64>() / js.len() as f64;
                    w.push(&[Cell::from(theta), Cell::from(mean), Cell::from("")])?;
                }
                Err(e) => {
                    out.partial = true;
                    w.push(&[Cell::from(theta), Cell::from(f64::NAN), Cell::from(e.to_string())])?;
                }
            }
        }
    }

    if spec.husimi {
        for b in 0..bands.n_bands() {
            write_husimi(
                &bands.states[b][0],
                &cfg.husimi,
                params.mu,
                &format!("husimi/band_{b:03}"),
                out,
            )?;
        }
    }
    if spec.dump_states {
        for (k, &theta) in grid.iter().enumerate() {
            for b in 0..bands.n_bands() {
                let rec = StateRecord::new(bands.states[b][k].clone(), params.mu, field.t0);
                let name = format!("states/theta_{k:04}_band_{b:03}.txt");
                rec.save(&out.path(&name)?)?;
                log::debug!("theta {theta}: wrote {name}");
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ContinueSummary {
    seed: String,
    theta: f64,
    g_start: f64,
    g_max: f64,
    points: usize,
    terminated_by: &'static str,
    fold_g: Option<f64>,
    bend_g: Option<f64>,
    g_star: Option<f64>,
    linear_quasienergy: f64,
}

fn cmd_continue(cfg: &Config, seed_state: Option<&Path>, out: &mut Outputs) -> Result<()> {
    let section = cfg.continuation.as_ref().expect("validated");
    let params = cfg.model_params()?;
    let field = cfg.field()?;
    let t0 = field.t0;
    let prop = Propagator::new(&params, &field)?;
    let linear_prop = prop.with_g(0.0)?;
    let opts = NewtonOptions {
        tol: section.tol,
        ..NewtonOptions::default()
    };
    let mu = params.mu;

    let spectrum = FloquetSpectrum::from_propagator(&linear_prop, t0)?;
    let (seed, seed_eps, seed_label, base) = match (seed_state, section.band) {
        (Some(path), _) => {
            let rec = StateRecord::load(path)?;
            if rec.psi.n_max() != params.n_max {
                return Err(Error::DimensionMismatch {
                    expected: params.dim(),
                    got: rec.psi.dim(),
                });
            }
            let psi = rec.psi.normalized();
            let k = spectrum.best_match(&psi);
            let mapped = period_map(&prop, &psi, t0)?;
            let eps = -psi.inner(&mapped).arg();
            (psi, eps, path.display().to_string(), k)
        }
        (None, Some(b)) => {
            if b >= spectrum.len() {
                return Err(Error::param("band", format!("{b} outside the spectrum")));
            }
            (
                spectrum.states[b].clone(),
                spectrum.quasienergies[b],
                format!("band {b}"),
                b,
            )
        }
        (None, None) => {
            return Err(Error::Config(vec![
                "continue.band: required without --seed-state".into()
            ]))
        }
    };
    let start = newton_solve(&seed, seed_eps, &prop, t0, &opts)?;
    let branch = continue_in_g(&start, section.g_max, section.dg, &prop, t0, &opts)?;

    let base_eps = spectrum.quasienergies[base];
    let base_state = &spectrum.states[base];
    let partner = section.partner;
    let g_star = match partner {
        Some(q) => {
            let o1 = Orbit::sample(&linear_prop, base_state, t0, ORBIT_SAMPLES)?;
            let o2 = Orbit::sample(&linear_prop, &spectrum.states[q], t0, ORBIT_SAMPLES)?;
            critical_g(&o1, &o2, base_eps, spectrum.quasienergies[q], mu).ok()
        }
        None => None,
    };

    let schema = Schema::new(&[
        ("g", Kind::Float),
        ("quasienergy", Kind::Float),
        ("momentum", Kind::Float),
        ("residual", Kind::Float),
        ("iterations", Kind::Int),
        ("weight_a", Kind::Float),
        ("weight_b", Kind::Float),
        ("outside", Kind::Float),
        ("eps_perturbative", Kind::Float),
        ("eps_two_state", Kind::Float),
        ("g_star", Kind::Float),
    ]);
    let rows: Vec<Result<Vec<Cell>>> = exec::map_range(branch.len(), |i| {
        let pt = &branch.points[i];
        let p = prop.with_g(pt.g)?;
        let orbit = Orbit::sample(&p, &pt.state, t0, ORBIT_SAMPLES)?;
        let eq15 = quasienergy_perturbative(&orbit, pt.g, mu, base_eps);
        let (a, b, outside, eq16) = match partner {
            Some(q) => {
                let w = project_two_state(&pt.state, base_state, &spectrum.states[q]);
                let e = quasienergy_two_state(&w, base_eps, spectrum.quasienergies[q], &orbit, pt.g, mu);
                (w.a, w.b, w.outside, e)
            }
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        Ok(vec![
            Cell::from(pt.g),
            Cell::from(pt.quasienergy),
            Cell::from(branch.momenta[i]),
            Cell::from(pt.residual),
            Cell::from(pt.iterations),
            Cell::from(a),
            Cell::from(b),
            Cell::from(outside),
            Cell::from(eq15),
            Cell::from(eq16),
            Cell::from(g_star.unwrap_or(f64::NAN)),
        ])
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    crate::analysis::emit_table(&schema, &rows, &out.path("branch.csv")?)?;

    let marker = bifurcation_marker(&branch);
    let summary = ContinueSummary {
        seed: seed_label,
        theta: field.theta,
        g_start: params.g,
        g_max: section.g_max,
        points: branch.len(),
        terminated_by: branch.terminated_by.as_str(),
        fold_g: match marker {
            Some(BifurcationMarker::Fold(g)) => Some(g),
            _ => None,
        },
        bend_g: match marker {
            Some(BifurcationMarker::Bend(g)) => Some(g),
            _ => None,
        },
        g_star,
        linear_quasienergy: base_eps,
    };
    write_json(&summary, &out.path("continue_summary.json")?)?;
    if branch.terminated_by == Termination::ConvergenceFailure {
        out.partial = true;
    }
    let last = branch.last();
    StateRecord::new(last.state.clone(), mu, t0).save(&out.path("final_state.txt")?)?;
    Ok(())
}

fn cmd_current_scan(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let section = cfg.scan.as_ref().expect("validated");
    let params = cfg.model_params()?;
    let field = cfg.field()?;
    let spec = ScanSpec {
        axis: section.axis,
        grid: section.grid(field.period()),
        params,
        field,
        initial: WaveFunction::plane_wave(section.initial_n, params.n_max)?,
        n_periods: section.n_periods,
        max_periods: section.max_periods.unwrap_or(section.n_periods),
        plateau_tol: section.plateau_tol,
    };
    let schema = Schema::new(&[
        (section.axis.as_str(), Kind::Float),
        ("current", Kind::Float),
        ("current_half", Kind::Float),
        ("converged", Kind::Bool),
        ("total_periods", Kind::Int),
        ("error", Kind::Text),
    ]);
    let timing = Schema::new(&[(section.axis.as_str(), Kind::Float), ("wall_time", Kind::Float)]);
    let path = out.path("scan.csv")?;
    let timing_path = out.path("scan_timing.csv")?;
    let (mut w, done) = if path.exists() {
        TableWriter::resume(schema.clone(), &path).or_else(|_| TableWriter::create(schema, &path).map(|w| (w, 0)))?
    } else {
        (TableWriter::create(schema, &path)?, 0)
    };
    let mut tw = if done > 0 && timing_path.exists() {
        TableWriter::resume(timing.clone(), &timing_path)
            .map(|(w, _)| w)
            .or_else(|_| TableWriter::create(timing, &timing_path))?
    } else {
        TableWriter::create(timing, &timing_path)?
    };
    if done > 0 {
        log::info!("resuming after {done} completed rows");
    }
    let rows = scan(&spec, done, |row| {
        let cells = match &row.estimate {
            Ok(e) => vec![
                Cell::from(row.value),
                Cell::from(e.value),
                Cell::from(e.half_value()),
                Cell::from(e.converged),
                Cell::from(e.total_periods),
                Cell::from(""),
            ],
            Err(msg) => vec![
                Cell::from(row.value),
                Cell::from(f64::NAN),
                Cell::from(f64::NAN),
                Cell::from(false),
                Cell::from(spec.n_periods),
                Cell::from(msg.as_str()),
            ],
        };
        w.push(&cells)?;
        tw.push(&[Cell::from(row.value), Cell::from(row.wall_time)])
    })?;
    if rows.iter().any(|r| r.estimate.is_err()) {
        out.partial = true;
    }
    Ok(())
}

fn branch_rows(mode: &str, label: &str, b: &DimerBranch, rows: &mut Vec<Vec<Cell>>) {
    for o in &b.orbits {
        rows.push(vec![
            Cell::from(mode),
            Cell::from(label),
            Cell::from(o.g),
            Cell::from(o.quasienergy),
            Cell::from(crate::floquet::linear::wrap_phase(o.quasienergy)),
            Cell::from(o.imbalance),
            Cell::from(o.residual),
        ]);
    }
}

#[derive(Debug, Serialize)]
struct DimerSummary {
    mode: &'static str,
    classification: &'static str,
    critical_g: Option<f64>,
    main_terminated_by: &'static str,
    spawned: usize,
}

fn cmd_dimer(cfg: &Config, out: &mut Outputs) -> Result<()> {
    let section = cfg.dimer.as_ref().expect("validated");
    let p = cfg.dimer_params()?;
    let lin = linear_orbits(&p)?;
    let schema = Schema::new(&[
        ("mode", Kind::Text),
        ("branch", Kind::Text),
        ("g", Kind::Float),
        ("quasienergy", Kind::Float),
        ("quasienergy_wrapped", Kind::Float),
        ("imbalance", Kind::Float),
        ("residual", Kind::Float),
    ]);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (mode, start) in ["in_phase", "out_of_phase"].into_iter().zip(lin.iter()) {
        let start = if p.g != 0.0 {
            crate::dimer::dimer_orbit_solve(&start.state, start.quasienergy, &p)?
        } else {
            *start
        };
        let c = dimer_continue(&start, section.g_max, section.dg, &p)?;
        branch_rows(mode, "main", &c.main, &mut rows);
        for (k, b) in c.spawned.iter().enumerate() {
            branch_rows(mode, &format!("spawned_{k}"), b, &mut rows);
        }
        summaries.push(DimerSummary {
            mode,
            classification: c.classification.as_str(),
            critical_g: c.critical_g,
            main_terminated_by: c.main.terminated_by.as_str(),
            spawned: c.spawned.len(),
        });
    }
    crate::analysis::emit_table(&schema, &rows, &out.path("dimer_branches.csv")?)?;
    write_json(&summaries, &out.path("dimer_summary.json")?)?;
    Ok(())
}

fn cmd_husimi(cfg: &Config, seed_state: Option<&Path>, out: &mut Outputs) -> Result<()> {
    let path = seed_state.ok_or_else(|| Error::Config(vec!["husimi: --seed-state is required".into()]))?;
    let rec = StateRecord::load(path)?;
    let psi = rec.psi.normalized();
    write_husimi(&psi, &cfg.husimi, rec.mu, "husimi", out)?;
    Ok(())
}
