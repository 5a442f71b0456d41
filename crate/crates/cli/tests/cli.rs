use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DOS: &str = r#"{"experiment":{"kind":"dos","params":{"lo":-1.0,"hi":7.0,"bins":8,"n":20}},"model":{"dimension":1,"cells":30,"lambda":2.0},"seed":5}"#;

const TAILS: &str = r#"{"experiment":{"kind":"tails","params":{"z":{"e":1.0,"eps":0.0},"x":[4,0],"y":[9,0],"t_grid":[1.0,3.0,10.0],"n":1000}},"model":{"dimension":1,"cells":14,"lambda":4.0},"seed":9}"#;

fn locmoment(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locmoment")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn body(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "dos.json", DOS);
    let out = dir.path().join("out");
    let o = locmoment(&["dos", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dos.csv").exists() && out.join("dos.json").exists());
    let v = locmoment(&["verify", "--out", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));
}

#[test]
fn bodies_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tails.json", TAILS);
    let mut bodies = Vec::new();
    for (k, w) in ["1", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("o{k}"));
        let o = locmoment(&["tails", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", w]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        bodies.push(body(&out.join("tails.csv")));
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
}

#[test]
fn seed_override_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "dos.json", DOS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    locmoment(&["dos", "--config", &cfg, "--out", a.to_str().unwrap()]);
    locmoment(&["dos", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(body(&a.join("dos.csv")), body(&b.join("dos.csv")));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "dos.json", DOS);
    assert_eq!(locmoment(&["nosuchkind", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(locmoment(&["criterion", "--config", &cfg]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.json", &DOS.replace("\"bins\"", "\"nbins\""));
    let o = locmoment(&["dos", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nbins"));
    assert_eq!(locmoment(&["dos", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(locmoment(&["sweep", "--config", &cfg, "--axis", "model.mode", "--values", "1"]).status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "decay.json",
        r#"{"experiment":{"kind":"decay","params":{"z":{"e":2.0,"eps":0.0},"s":0.3,"n":20,"distances":[1,2,3,4,5,6]}},"model":{"dimension":1,"cells":5,"lambda":0.0},"seed":5}"#,
    );
    let out = dir.path().join("o");
    let o = locmoment(&["decay", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_writes_tagged_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "dos.json", DOS);
    let out = dir.path().join("s");
    let o = locmoment(&["sweep", "--config", &cfg, "--axis", "model.lambda", "--values", "0,1,2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = body(&out.join("dos-sweep.csv"));
    let lines: Vec<&str> = b.lines().collect();
    assert!(lines[0].starts_with("model.lambda,"));
    assert_eq!(lines.len(), 1 + 3 * 8);
    assert_eq!(locmoment(&["verify", "--out", out.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn tampered_output_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "dos.json", DOS);
    let out = dir.path().join("t");
    locmoment(&["dos", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let csv = out.join("dos.csv");
    let text = fs::read_to_string(&csv).unwrap().replacen("\"seed\":5", "\"seed\":6", 1);
    fs::write(&csv, text).unwrap();
    assert_eq!(locmoment(&["verify", "--out", out.to_str().unwrap()]).status.code(), Some(2));
}
