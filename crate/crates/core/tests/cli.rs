use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ratchet::config::{Command as Cmd, Config};

const LATTICE: &str = r#"
[model]
mu = 0.2
n_max = 6
steps_per_period = 128

[field]
E1 = 3.26
E2 = 1.2
omega = 3.0
theta = -1.6
"#;

fn run(sub: &str, config: &str, out: &Path, extra: &[&str]) -> i32 {
    let dir = out.parent().unwrap();
    let cfg = dir.join(format!("{sub}.toml"));
    fs::write(&cfg, config).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_ratchet"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg("1")
        .args(extra)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    status.code().unwrap()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn read(out: &Path, name: &str) -> String {
    fs::read_to_string(out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn header(text: &str) -> &str {
    text.lines().next().unwrap()
}

#[test]
fn spectrum_run_writes_tables_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let cfg = format!(
        "{LATTICE}\n[spectrum]\ntheta_min = -1.6\ntheta_max = -1.5\ntheta_points = 3\nt0_samples = 8\nhusimi = true\n"
    );
    assert_eq!(run("floquet-spectrum", &cfg, &out, &[]), 0);

    let bands = read(&out, "bands.csv");
    assert_eq!(header(&bands), "theta,band,quasienergy,momentum,class");
    assert_eq!(bands.lines().count(), 1 + 3 * 13);
    assert!(!bands.contains('\r'));
    assert!(header(&read(&out, "gaps.csv")).contains("gap"));
    assert_eq!(read(&out, "currents.csv").lines().count(), 4);
    assert!(out.join("husimi/band_000.csv").exists());
    let side: serde_json::Value = serde_json::from_str(&read(&out, "husimi/band_000.json")).unwrap();
    assert!(side["sigma_x"].as_f64().unwrap() > 0.0);

    let m = manifest(&out);
    assert_eq!(m["command"], "floquet-spectrum");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["wall_time"].as_f64().unwrap() >= 0.0);
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"bands.csv"));
    for f in outputs {
        assert!(out.join(f).exists(), "{f}");
    }

    // Same config, same bytes.
    let again = tmp.path().join("b");
    assert_eq!(run("floquet-spectrum", &cfg, &again, &[]), 0);
    assert_eq!(bands, read(&again, "bands.csv"));
    assert_eq!(m["config_hash"], manifest(&again)["config_hash"]);
}

#[test]
fn bad_config_fails_with_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = format!("{LATTICE}\n[spectrum]\ntheta_min = -1.6\ntheta_max = -1.5\ntheta_points = 0\n");
    assert_eq!(run("floquet-spectrum", &cfg, &out, &[]), 1);
    let m = manifest(&out);
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("theta_points"));

    assert_eq!(run("floquet-spectrum", "[model\n", &out, &[]), 1);
    assert_eq!(manifest(&out)["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn continuation_then_husimi_of_the_final_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cont");
    let cfg = format!("{LATTICE}\n[continue]\nband = 2\npartner = 1\ng_max = 3e-4\ndg = 1e-4\n");
    assert_eq!(run("continue", &cfg, &out, &[]), 0);
    let branch = read(&out, "branch.csv");
    assert_eq!(
        header(&branch),
        "g,quasienergy,momentum,residual,iterations,weight_a,weight_b,outside,eps_perturbative,eps_two_state,g_star"
    );
    assert_eq!(branch.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "continue_summary.json")).unwrap();
    assert_eq!(summary["terminated_by"], "max_g");
    assert_eq!(summary["points"], 4);

    let state = out.join("final_state.txt");
    let hus = tmp.path().join("hus");
    let cfg = "[husimi]\nnx = 32\nnp = 32\np_min = -2.0\np_max = 2.0\n";
    assert_eq!(run("husimi", cfg, &hus, &["--seed-state", state.to_str().unwrap()]), 0);
    assert_eq!(read(&hus, "husimi.csv").lines().count(), 1 + 32 * 32);
    assert!(hus.join("husimi.json").exists());

    // Seeding continue from the stored state.
    let resumed = tmp.path().join("resumed");
    let cfg = format!("{LATTICE}\n[continue]\npartner = 1\ng_max = 1e-4\ndg = 1e-4\n");
    assert_eq!(
        run("continue", &cfg, &resumed, &["--seed-state", state.to_str().unwrap()]),
        0
    );

    // Husimi without a state is a usage error.
    assert_eq!(run("husimi", "", &tmp.path().join("none"), &[]), 1);
}

#[test]
fn t0_scan_is_deterministic_and_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scan");
    let cfg = format!("{LATTICE}\n[scan]\naxis = \"t0\"\nt0_points = 3\nn_periods = 64\n");
    assert_eq!(run("current-scan", &cfg, &out, &[]), 0);
    let first = read(&out, "scan.csv");
    assert_eq!(header(&first), "t0,current,current_half,converged,total_periods,error");
    assert_eq!(first.lines().count(), 4);
    assert!(header(&read(&out, "scan_timing.csv")).contains("wall_time"));

    // A complete table is left alone on rerun.
    assert_eq!(run("current-scan", &cfg, &out, &[]), 0);
    assert_eq!(first, read(&out, "scan.csv"));

    // An interrupted table is completed with identical rows.
    let cut: String = first.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(out.join("scan.csv"), cut).unwrap();
    assert_eq!(run("current-scan", &cfg, &out, &[]), 0);
    assert_eq!(first, read(&out, "scan.csv"));
}

#[test]
fn dimer_run_reports_both_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dimer");
    let cfg = "[dimer]\nC = 1.0\nmu = 1.0\nf1 = 0.0\nf2 = 0.0\nomega = 6.283185307179586\ntheta = 0.0\nsteps_per_period = 256\ng_max = 2.2\ndg = 0.2\n";
    assert_eq!(run("dimer", cfg, &out, &[]), 0);
    let rows = read(&out, "dimer_branches.csv");
    assert_eq!(
        header(&rows),
        "mode,branch,g,quasienergy,quasienergy_wrapped,imbalance,residual"
    );
    assert!(rows.lines().any(|l| l.starts_with("out_of_phase,main,")));
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "dimer_summary.json")).unwrap();
    assert_eq!(summary[0]["mode"], "in_phase");
    assert_eq!(summary[0]["classification"], "pitchfork");
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let cmd = match name.split('_').next().unwrap() {
            "spectrum" | "small" => Cmd::FloquetSpectrum,
            "continue" => Cmd::Continue,
            "gscan" | "theta" | "t0" => Cmd::CurrentScan,
            "dimer" => Cmd::Dimer,
            other => panic!("unexpected config {other}"),
        };
        let cfg = Config::load(&path).unwrap();
        cfg.validate(cmd).unwrap_or_else(|e| panic!("{name}: {e}"));
        seen += 1;
    }
    assert!(seen >= 10);
}
