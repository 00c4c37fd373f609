use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg")).args(args).output().expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_1D: &str = r#"
[problem]
dim = 1
n = 64
alpha = 1.5
gamma = 2.0
drift = [0.0]
coupling = [{ c = 0.5, theta = 2.0 }]
potential = { family = "cosine-shift", amplitude = 0.5, shift = 0.25 }
"#;

#[test]
fn oracle_on_fig1_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mode = \"oracle\"\npreset = \"fig1\"\n");
    let out = tmp.path().join("o");
    let r = mfg(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["m.csv", "u.csv", "summary.json", "m.dat", "m.plt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let s = summary(&out);
    assert!((s["Hbar"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(s["mode"], "oracle");
    let m = std::fs::read_to_string(out.join("m.csv")).unwrap();
    assert!(m.starts_with("x,value\n"));
    assert_eq!(m.lines().count(), 201);
}

#[test]
fn missing_gamma_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("mode = \"solve\"\n{}", SMALL_1D.replace("gamma = 2.0\n", "")));
    let r = mfg(&["--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("gamma"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(mfg(&[]).status.code(), Some(1));
    assert_eq!(mfg(&["--preset", "no-such-preset"]).status.code(), Some(1));
    assert_eq!(mfg(&["--config", "/definitely/not/here.toml"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mode = \"solve\"\nbogus = 1\n");
    assert_eq!(mfg(&["--config", &cfg]).status.code(), Some(1));
    let cfg = write_config(tmp.path(), &format!("mode = \"solve\"\n{}", SMALL_1D.replace("alpha = 1.5", "alpha = 2.5")));
    assert_eq!(mfg(&["--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn non_converged_run_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "mode = \"solve\"\npreset = \"fig-2d-p13\"\nn = 10\n[solver]\nmax_iters = 1\n";
    let cfg = write_config(tmp.path(), body);
    let out = tmp.path().join("o");
    let r = mfg(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(summary(&out)["converged"], false);
}

#[test]
fn emit_selects_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = mfg(&["--preset", "fig1", "--n", "32", "--emit", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names, vec!["summary.json".to_string()]);
    assert_eq!(summary(&out)["n"], 32);
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("mode = \"solve\"\ninit = \"random\"\n{SMALL_1D}"));
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let r = mfg(&["--config", &cfg, "--seed", "11", "--emit", "csv", "--out", out.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(0));
        (std::fs::read(out.join("u.csv")).unwrap(), std::fs::read(out.join("m.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn sweep_writes_labelled_subdirectories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = mfg(&["--preset", "p-sweep", "--n", "40", "--emit", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let mut hbars = Vec::new();
    for p in ["0", "2", "4", "6", "8"] {
        let s = summary(&out.join(format!("P={p}")));
        assert_eq!(s["converged"], true);
        hbars.push(s["Hbar"].as_f64().unwrap());
    }
    assert!(hbars.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn table1_reproduction_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let r = mfg(&["--preset", "table1", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let errs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 3);
    assert!(errs.windows(2).all(|w| w[1] < w[0]));
    let s = summary(&out);
    assert_eq!(s["convergence"]["reference"], "continuous");
    assert!(s["convergence"]["order"].as_f64().is_some());
    let single = tmp.path().join("single");
    assert_eq!(mfg(&["--preset", "table1", "--n", "100", "--out", single.to_str().unwrap()]).status.code(), Some(0));
    let csv = std::fs::read_to_string(single.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("100,"));
}

#[test]
fn converged_summaries_satisfy_constraints() {
    let tmp = tempfile::tempdir().unwrap();
    for (preset, n) in [("fig3", "100"), ("critical-1d", "100"), ("transform-8-1", "16"), ("second-order-9-1", "16"), ("fig-2d-pm13", "16"), ("table1", "100")] {
        let out = tmp.path().join(preset);
        let r = mfg(&["--preset", preset, "--n", n, "--out", out.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(0), "{preset}: {}", String::from_utf8_lossy(&r.stderr));
        let s = summary(&out);
        assert_eq!(s["converged"], true, "{preset}");
        assert!(s["mass_error"].as_f64().unwrap() <= 1e-10, "{preset}: {}", s["mass_error"]);
        assert!(s["umean_error"].as_f64().unwrap() <= 1e-10, "{preset}: {}", s["umean_error"]);
    }
    let t = summary(&tmp.path().join("transform-8-1"));
    let p: Vec<f64> = t["P_recovered"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((p[0] - 1.0).abs() < 0.05 && (p[1] - 3.0).abs() < 0.05, "{p:?}");
    assert!(tmp.path().join("transform-8-1/stages.csv").exists());
    let c = summary(&tmp.path().join("critical-1d"));
    assert!(c["algebraic_residual"].as_f64().unwrap() <= 1e-10);
    assert!(tmp.path().join("second-order-9-1/psi.csv").exists());
}
