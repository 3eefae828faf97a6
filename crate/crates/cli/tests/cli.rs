//! The `qwalk` binary end to end: exit codes, overrides and emitted files.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn qwalk(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qwalk"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn manifest_lists_every_file_with_its_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qwalk(&["quench", "--mode", "lindblad", "--out", out, "--grid", "64"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["command"], "quench-lindblad");
    assert_eq!(m["config"]["grid"], 64);
    let listed: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    let mut on_disk: Vec<String> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    on_disk.retain(|n| n != "manifest.json");
    on_disk.sort();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(sorted, on_disk);
    for f in m["files"].as_array().unwrap() {
        let data = fs::read(dir.path().join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&data)));
        assert_eq!(f["bytes"].as_u64().unwrap(), data.len() as u64);
    }
    assert!(m["config"]["noise"]["gamma"].is_null());
    assert!(json(&dir.path().join("summary.json"))["gamma"].as_f64().unwrap() > 0.0);
}

#[test]
fn resolved_config_reruns_to_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = qwalk(&["quench", "--out", a.to_str().unwrap(), "--seed", "9", "--grid", "32"], &[]);
    assert_eq!(code(&o), 0);
    let b = dir.path().join("b");
    let o = qwalk(&["quench", "--config", a.join("config.toml").to_str().unwrap(), "--out", b.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["quench.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    // Unknown subcommand and unknown configuration key.
    assert_eq!(code(&qwalk(&["nonsense"], &[])), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[schedule]\nsteps = 4\nramp = 2\n").unwrap();
    assert_eq!(code(&qwalk(&["quench", "--config", bad.to_str().unwrap(), "--out", out], &[])), 2);
    assert_eq!(code(&qwalk(&["quench", "--config", "/no/such/file.toml", "--out", out], &[])), 2);
    // A grid below the minimum size is rejected before any work.
    assert_eq!(code(&qwalk(&["scaling", "--grid", "5", "--out", out], &[])), 2);
    // Calibrating the dephasing rate needs a gapped final Hamiltonian.
    let gapless = dir.path().join("gapless.toml");
    fs::write(&gapless, "grid = 16\n[schedule]\ntheta_f = [0.0, 0.0]\n").unwrap();
    let o = qwalk(&["quench", "--mode", "lindblad", "--config", gapless.to_str().unwrap(), "--out", out], &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    // Output path below a regular file.
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let o = qwalk(&["quench", "--grid", "16", "--out", file.join("sub").to_str().unwrap()], &[]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("plain"));
}

#[test]
fn environment_mirrors_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = qwalk(
        &["quench", "--grid", "48"],
        &[("QWALK_OUT", out.to_str().unwrap()), ("QWALK_GRID", "32"), ("QWALK_SEED", "5"), ("QWALK_MODE", "unitary")],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["grid"], 48);
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(m["config"]["mode"], "quench-unitary");
    assert_eq!(table(&out.join("quench.csv")).0[1], "phi_B");
}

#[test]
fn phase_diagram_rows_and_flat_band_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pd.toml");
    fs::write(&cfg, "grid = 64\n[phase_diagram]\nresolution = 8\nboundary_grid = 64\n").unwrap();
    let out = dir.path().join("o");
    let o = qwalk(&["phase-diagram", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&out.join("phase_diagram.csv"));
    assert_eq!(header, ["theta1", "theta2", "gap", "berry_phase"]);
    assert_eq!(rows.len(), 64);
    // θ = (0, π) is cell (0, 4) on an 8-cell axis.
    let flat = &rows[4];
    assert_eq!(flat[0].parse::<f64>().unwrap(), 0.0);
    assert!((flat[1].parse::<f64>().unwrap() - PI).abs() < 1e-15);
    assert!((flat[2].parse::<f64>().unwrap() - PI / 2.0).abs() < 1e-12);
    assert_eq!(json(&out.join("phase_diagram.json"))["audit"]["violations"], 0);
}

#[test]
fn density_dump_has_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("q.toml");
    fs::write(&cfg, "grid = 16\n[schedule]\nsteps = 3\n[disorder]\nrealizations = 3\n[quench]\ndump_densities = true\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&qwalk(&["quench", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[])), 0);
    let data = fs::read(out.join("densities.bin")).unwrap();
    assert_eq!(&data[..8], b"QWDENS01");
    let steps = u64::from_le_bytes(data[8..16].try_into().unwrap());
    let nodes = u64::from_le_bytes(data[16..24].try_into().unwrap());
    assert_eq!((steps, nodes), (4, 16));
    assert_eq!(data.len(), 24 + 4 * 16 * 4 * 16);
    // The first node at t = 0 is ½[[1, i], [−i, 1]].
    let f = |i: usize| f64::from_le_bytes(data[24 + 8 * i..32 + 8 * i].try_into().unwrap());
    let expect = [0.5, 0.0, 0.0, 0.5, 0.0, -0.5, 0.5, 0.0];
    for (i, e) in expect.iter().enumerate() {
        assert!((f(i) - e).abs() < 1e-15, "entry {i}: {}", f(i));
    }
}

#[test]
fn exact_tomography_recovers_the_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    // The true state has rank two; a looser cap leaves unobservable freedom.
    fs::write(&cfg, "[tomography]\nsteps = 3\nexact = true\nrank = 2\n").unwrap();
    let out = dir.path().join("o");
    let o = qwalk(&["tomography", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("tomography.json"));
    assert!(s["fidelity"].as_f64().unwrap() > 1.0 - 1e-6, "{s}");
    assert!(s["phase_difference"].as_f64().unwrap() < 1e-3);
    let (header, rows) = table(&out.join("counts.csv"));
    assert_eq!(header, ["family_id", "x", "x_prime", "phase_tag", "counts", "shots"]);
    assert!(!rows.is_empty());
    let rho = qwalk_cli::output::read_matrix(&fs::read(out.join("reconstruction.bin")).unwrap()).unwrap();
    assert_eq!(rho.nrows(), 14);
    let trace: f64 = (0..14).map(|i| rho[(i, i)].re).sum();
    assert!((trace - 1.0).abs() < 1e-12);
}
