use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sweepctl(cmd: &str, dir: &Path, config: &str, out: &str) -> Run {
    let cfg = dir.join(format!("{out}.json"));
    fs::write(&cfg, config).unwrap();
    let Output { status, stdout, stderr } = Command::new(env!("CARGO_BIN_EXE_sweepctl"))
        .args([cmd, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .output()
        .unwrap();
    Run {
        code: status.code().unwrap(),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn lines(path: PathBuf) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn simulate_writes_one_row_per_node() {
    let d = TempDir::new().unwrap();
    let r = sweepctl("simulate", d.path(), r#"{"problem": "disk-push", "n": 100, "gamma": 50}"#, "sim");
    assert_eq!(r.code, 0, "{}", r.stderr);
    // header plus N + 1 nodes
    assert_eq!(lines(d.path().join("sim/catchup.csv")), 102);
    assert_eq!(lines(d.path().join("sim/penalty.csv")), 102);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("sim/summary.json")).unwrap()).unwrap();
    assert!(s["catchup_max_psi"].as_f64().unwrap() <= 1e-9);
    assert!(s["penalty"]["sup_gap_to_catchup"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_errors_exit_two() {
    let d = TempDir::new().unwrap();
    assert_eq!(sweepctl("simulate", d.path(), r#"{"n": 10}"#, "a").code, 2);
    assert_eq!(sweepctl("simulate", d.path(), r#"{"problem": "nope"}"#, "b").code, 2);
    assert_eq!(sweepctl("simulate", d.path(), r#"{"problem": "disk-push", "typo": 1}"#, "c").code, 2);
    let r = sweepctl("solve", d.path(), r#"{"problem": "interval-1d", "gamma": 0}"#, "d");
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("gamma"));
    // below 2 M / eta
    assert_eq!(sweepctl("solve", d.path(), r#"{"problem": "interval-1d", "gamma": 0.5}"#, "e").code, 2);
    assert_eq!(sweepctl("certify", d.path(), r#"{"problem": "interval-1d"}"#, "f").code, 2);
    let r = sweepctl("converge", d.path(), r#"{"problem": "disk-push", "gammas": [], "grids": [50]}"#, "g");
    assert_eq!(r.code, 2);
    assert!(!d.path().join("g/convergence.csv").exists());
}

#[test]
fn solve_and_certify_penalty() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"problem": "interval-1d", "n": 100, "gamma": 200, "reference_guess": true}"#;
    let r = sweepctl("solve", d.path(), cfg, "run");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("run/solve.json")).unwrap()).unwrap();
    assert!((rec["route_objective"].as_f64().unwrap() + 1.0).abs() < 1e-6);
    let r = sweepctl("certify", d.path(), cfg, "run");
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("2-adjoint"));
    assert!(d.path().join("run/certificate.json").exists());
    assert!(d.path().join("run/report.json").exists());
}

#[test]
fn certify_interior_problem() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"problem": "interior-classical", "n": 60, "gamma": 50}"#;
    assert_eq!(sweepctl("solve", d.path(), cfg, "run").code, 0);
    let r = sweepctl("certify", d.path(), cfg, "run");
    assert_eq!(r.code, 0, "{}", r.stdout);
}

#[test]
fn solve_and_certify_complementarity() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"problem": "interval-1d", "n": 60, "mode": "complementarity"}"#;
    let r = sweepctl("solve", d.path(), cfg, "run");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(lines(d.path().join("run/trajectory.csv")), 62);
    let r = sweepctl("certify", d.path(), cfg, "run");
    assert_eq!(r.code, 0, "{}", r.stdout);
    assert!(r.stdout.contains("closed-image hypothesis not verified"));
}

#[test]
fn converge_table() {
    let d = TempDir::new().unwrap();
    let r = sweepctl(
        "converge",
        d.path(),
        r#"{"problem": "disk-push", "gammas": [10, 50, 100, 200], "grids": [50, 100], "substeps": 4}"#,
        "c",
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(lines(d.path().join("c/convergence.csv")), 9);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("c/summary.json")).unwrap()).unwrap();
    assert_eq!(s["monotone"], serde_json::Value::Bool(true));
}

#[test]
fn check_catalog_defects_and_regularity() {
    let d = TempDir::new().unwrap();
    for p in ["disk-push", "interval-1d", "interior-classical", "ellipse-steer"] {
        let r = sweepctl("check", d.path(), &format!(r#"{{"problem": "{p}"}}"#), p);
        assert_eq!(r.code, 0, "{p}: {}", r.stdout);
    }
    let r = sweepctl("check", d.path(), r#"{"problem": "disk-push", "inject_defect": "psi.grad"}"#, "bad");
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("psi.grad"));
    assert_eq!(
        sweepctl("check", d.path(), r#"{"problem": "disk-push", "inject_defect": "f.jac"}"#, "bad2").code,
        2
    );

    assert_eq!(sweepctl("simulate", d.path(), r#"{"problem": "nonregular-1d", "n": 40}"#, "nr").code, 0);
    let traj = d.path().join("nr/catchup.csv");
    let cfg = format!(r#"{{"problem": "nonregular-1d", "trajectory": {:?}}}"#, traj.to_str().unwrap());
    let r = sweepctl("check", d.path(), &cfg, "nrc");
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("warning: non-regular"));
}

#[test]
fn runs_are_byte_identical() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"problem": "interval-1d", "n": 50, "gamma": 100, "seed": 7, "reference_guess": true}"#;
    for out in ["a", "b"] {
        assert_eq!(sweepctl("solve", d.path(), cfg, out).code, 0);
        assert_eq!(sweepctl("certify", d.path(), cfg, out).code, 0);
    }
    for f in ["solve.json", "trajectory.csv", "certificate.json", "report.json"] {
        let a = fs::read(d.path().join("a").join(f)).unwrap();
        let b = fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn emitted_files_read_back() {
    use sweep_core::{NonRegularCertificate, RegularCertificate, ResidualReport, StateTrajectory};
    let d = TempDir::new().unwrap();
    let pen = r#"{"problem": "interval-1d", "n": 50, "gamma": 100, "reference_guess": true}"#;
    let comp = r#"{"problem": "interval-1d", "n": 40, "mode": "complementarity"}"#;
    for (cfg, out) in [(pen, "p"), (comp, "c")] {
        assert_eq!(sweepctl("solve", d.path(), cfg, out).code, 0);
        assert_eq!(sweepctl("certify", d.path(), cfg, out).code, 0);
        for csv in ["trajectory.csv", "resimulated.csv"] {
            let text = fs::read_to_string(d.path().join(out).join(csv)).unwrap();
            let traj = StateTrajectory::read_csv(text.as_bytes()).unwrap();
            assert_eq!(traj.to_csv_string(), text, "{csv}");
        }
        let text = fs::read_to_string(d.path().join(out).join("report.json")).unwrap();
        let rep: ResidualReport = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&rep).unwrap() + "\n", text);
    }
    let cert = fs::read_to_string(d.path().join("p/certificate.json")).unwrap();
    serde_json::from_str::<RegularCertificate>(&cert).unwrap();
    let cert = fs::read_to_string(d.path().join("c/certificate.json")).unwrap();
    serde_json::from_str::<NonRegularCertificate>(&cert).unwrap();
    // a second certify reads the same solve.json again
    assert_eq!(sweepctl("certify", d.path(), pen, "p").code, 0);
}
