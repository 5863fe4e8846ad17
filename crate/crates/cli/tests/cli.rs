use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn dcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    dcm(&args)
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Small dephasing config with overridable pieces.
fn dephasing_text(noise: &str, h_a: &str) -> String {
    format!(
        r#"
seed = 5
[dims]
a = 2
b = 2
[operators]
h_a = {h_a}
l_ops = ["pauli_z"]
m_ops = ["pauli_x"]
[noise]
{noise}
[initial]
x = [0.7071067811865476, 0.7071067811865476]
y = [1, 0]
[window]
epsilon = 0.2
ensemble = 150
tau = {{ start = 0.0, stop = 0.6, count = 4 }}
"#
    )
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn bundled_configs_validate() {
    for name in ["dephasing.toml", "closed_two_qubit.toml", "interacting_feedback.toml"] {
        let out = dcm(&["validate", "--config", configs().join(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn simulate_writes_series_with_provenance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "d.toml", &dephasing_text("sigmaAA = [[0.3]]", "\"zero\""));
    let out = run_cmd("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
    assert!(csv.starts_with(&format!("# dcm {}", env!("CARGO_PKG_VERSION"))));
    assert!(csv.contains("# source = monte_carlo"));
    assert!(csv.contains("\"sigmaAA\":[[0.3]]"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("series.json")).unwrap()).unwrap();
    assert_eq!(json["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(json["config"]["seed"], 5);
    assert_eq!(json["data"]["series"].as_array().unwrap().len(), 4);
    let rows = csv_rows(&tmp.path().join("series.csv"));
    assert_eq!(rows.len(), 4);
    for row in rows {
        // trace column of ρ sums the real diagonal entries
        let rho_diag: f64 = (0..4).map(|i| row[1 + 32 + 2 * (i * 4 + i)]).sum();
        assert!((rho_diag - 1.0).abs() < 1e-12);
    }
}

#[test]
fn indefinite_cross_block_exits_2_and_names_block() {
    let tmp = TempDir::new().unwrap();
    let noise = "sigmaAA = [[0.1]]\nsigmaBB = [[0.1]]\nsigmaAB = [[0.5]]";
    let cfg = write_config(&tmp, "bad.toml", &dephasing_text(noise, "\"zero\""));
    let out = run_cmd("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmaAB"));
}

#[test]
fn step_guard_exits_2() {
    let tmp = TempDir::new().unwrap();
    let h = "{ preset = \"pauli_z\", scale = 100.0 }";
    let cfg = write_config(&tmp, "fast.toml", &dephasing_text("", h));
    assert_eq!(run_cmd("simulate", &cfg, tmp.path(), &[]).status.code(), Some(2));
    assert_eq!(run_cmd("validate", &cfg, tmp.path(), &[]).status.code(), Some(2));
}

#[test]
fn blowup_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "wild.toml", &dephasing_text("sigmaAA = [[1e8]]", "\"zero\""));
    let out = run_cmd("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_exits_1() {
    let tmp = TempDir::new().unwrap();
    let out = run_cmd("simulate", &tmp.path().join("nope.toml"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reference_matches_closed_form_dephasing() {
    let tmp = TempDir::new().unwrap();
    let gamma = 0.5;
    let out = run_cmd("reference", &configs().join("dephasing.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("reference.csv")).unwrap();
    assert!(csv.contains("# source = reference"));
    for row in csv_rows(&tmp.path().join("reference.csv")) {
        let tau = row[0];
        // ρ entry (|00⟩, |10⟩) = row-major index 2 of the 4x4 matrix
        let (re, im) = (row[1 + 32 + 2 * 2], row[1 + 32 + 2 * 2 + 1]);
        let modulus = (re * re + im * im).sqrt();
        assert!((modulus - 0.5 * (-2.0 * gamma * tau).exp()).abs() < 1e-8);
    }
}

#[test]
fn sweep_on_interacting_example_writes_report() {
    let tmp = TempDir::new().unwrap();
    let out = run_cmd("sweep", &configs().join("interacting_feedback.toml"), tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("scaling_report.json")).unwrap()).unwrap();
    let data = &report["data"];
    assert_eq!(data["per_epsilon"].as_array().unwrap().len(), 3);
    assert!(data["fitted_slope"].as_f64().unwrap().is_finite());
    let plot = fs::read_to_string(tmp.path().join("plot.dat")).unwrap();
    assert_eq!(plot.lines().filter(|l| !l.starts_with('#')).count(), 3);
    for eps in ["0.4", "0.2", "0.1"] {
        assert!(tmp.path().join(format!("series_{eps}.csv")).exists());
    }
}

#[test]
fn static_sweep_is_inconclusive() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("closed_two_qubit.toml"))
        .unwrap()
        .replace("h_a = [[0.5, 0.4], [0.4, -0.5]]", "h_a = \"zero\"")
        .replace("h_b = { preset = \"pauli_y\", scale = 0.35 }", "h_b = \"zero\"");
    let cfg = write_config(&tmp, "static.toml", &text);
    let out = run_cmd("sweep", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inconclusive"));
}

#[test]
fn noise_check_without_noise_is_all_zero() {
    let tmp = TempDir::new().unwrap();
    let text = dephasing_text("", "\"zero\"") + "[diagnostics]\nsamples = 1000\n";
    let cfg = write_config(&tmp, "quiet.toml", &text);
    let out = run_cmd("noise-check", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&tmp.path().join("noise_check.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1..].iter().all(|x| *x == 0.0)));
}

#[test]
fn same_config_and_seed_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "d.toml", &dephasing_text("sigmaAA = [[0.3]]\nsigmaBB = [[0.2]]", "\"zero\""));
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run_cmd("simulate", &cfg, &a, &["--workers", "1"]).status.success());
    assert!(run_cmd("simulate", &cfg, &b, &["--workers", "1"]).status.success());
    assert!(run_cmd("simulate", &cfg, &c, &["--workers", "3"]).status.success());
    for f in ["series.csv", "series.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(data_lines(&a.join("series.csv")), data_lines(&c.join("series.csv")));

    let d = tmp.path().join("d");
    assert!(run_cmd("simulate", &cfg, &d, &["--seed", "6"]).status.success());
    assert_ne!(data_lines(&a.join("series.csv")), data_lines(&d.join("series.csv")));
}
