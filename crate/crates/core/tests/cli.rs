use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use physfuse::config::TINY_SYNTHETIC;

fn physfuse(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_physfuse"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--out").arg(out).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path, edit: impl Fn(String) -> String) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, edit(TINY_SYNTHETIC.to_string())).unwrap();
    p
}

#[test]
fn evaluate_writes_a_full_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), |s| s);
    let out = dir.path().join("run");
    let o = physfuse(&["evaluate"], Some(&cfg), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(table.lines().count(), 121);
    assert!(out.join("summary.toml").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_physfuse"))
        .args(["report", "--dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&physfuse(&["frobnicate"], None, dir.path())), 1);
    assert_eq!(code(&physfuse(&["--precision", "16", "gradcheck"], None, dir.path())), 1);

    let cfg = tiny_config(dir.path(), |s| s.replace("folds = 10", "folds = 1"));
    assert_eq!(code(&physfuse(&["evaluate"], Some(&cfg), dir.path())), 1);
    let cfg = tiny_config(dir.path(), |s| s + "\n[bogus]\nx = 1\n");
    assert_eq!(code(&physfuse(&["evaluate"], Some(&cfg), dir.path())), 1);
    assert_eq!(code(&physfuse(&["--help"], None, dir.path())), 0);
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = physfuse(&["report", "--dir", "/nonexistent/run"], None, dir.path());
    assert_eq!(code(&o), 2);
    let o = physfuse(&["preprocess", "--manifest", "/nonexistent/manifest.toml"], None, dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = physfuse(&["gradcheck"], None, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn example_config_is_the_bundled_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = physfuse(&["example-config"], None, dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), TINY_SYNTHETIC.trim());
}

#[test]
fn divergent_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), |s| s.replace("initial = 3e-3", "initial = 1e300"));
    let o = physfuse(&["finetune", "--modality", "ecg", "--target", "arousal"], Some(&cfg), &dir.path().join("run"));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synthetic_generation_and_preprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "subjects = 1\ntrials_per_subject = 2\nduration_s = 20.0\n").unwrap();
    let raw = dir.path().join("raw");
    let o = physfuse(&["--seed", "3", "synth-gen", "--spec", spec.to_str().unwrap()], None, &raw);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(raw.join("manifest.toml")).unwrap();

    let pre = dir.path().join("pre");
    let manifest = raw.join("manifest.toml");
    let o = physfuse(&["preprocess", "--manifest", manifest.to_str().unwrap()], None, &pre);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = physfuse::dataset::load_manifest(&pre.join("manifest.toml")).unwrap();
    assert_eq!(m.sample_rate, 128.0);
    assert_eq!(m.entries.len(), 2);

    let again = dir.path().join("again");
    physfuse(&["--seed", "3", "synth-gen", "--spec", spec.to_str().unwrap()], None, &again);
    assert_eq!(fs::read(again.join("manifest.toml")).unwrap(), first);
}
