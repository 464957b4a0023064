use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vtalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtalign")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

/// Tiny corpus and a briefly trained model in `dir`.
fn small_model(dir: &Path) {
    stdout_json(&vtalign(dir, &["gen-shapes", "--out", "c", "--seed", "1", "--n", "4", "--height", "56", "--width", "56"]));
    stdout_json(&vtalign(dir, &["train", "--pairs", "c/pairs.manifest", "--seed", "0", "--out", "m.dtxm", "--steps", "3", "--batch", "2"]));
}

#[test]
fn help_and_version_exit_zero() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&vtalign(t.path(), &["--help"])), 0);
    assert_eq!(code(&vtalign(t.path(), &["--version"])), 0);
    assert_eq!(code(&vtalign(t.path(), &["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let t = tempfile::tempdir().unwrap();
    // seeds are never defaulted for stochastic commands
    assert_eq!(code(&vtalign(t.path(), &["train", "--pairs", "p", "--out", "m"])), 1);
    assert_eq!(code(&vtalign(t.path(), &["fit-tree", "--embeddings", "e", "--out", "t"])), 1);
    assert_eq!(code(&vtalign(t.path(), &["gen-shapes", "--out", "x", "--seed", "0", "--threads", "0"])), 1);
    assert_eq!(code(&vtalign(t.path(), &["no-such-command"])), 1);
}

#[test]
fn missing_input_exits_two() {
    let t = tempfile::tempdir().unwrap();
    let o = vtalign(t.path(), &["eval-miou", "--pred", "nope.dtxs", "--gt", "nope.dtxs"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_input_exits_two() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("bad.dtxs"), b"DTXSgarbage").unwrap();
    assert_eq!(code(&vtalign(t.path(), &["eval-miou", "--pred", "bad.dtxs", "--gt", "bad.dtxs"])), 2);
}

#[test]
fn intersect_matches_set_arithmetic() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("a.ids"), "x1\nx2\nx3\nx5\n").unwrap();
    std::fs::write(t.path().join("b.ids"), "x2\nx3\nx4\n").unwrap();
    let v = stdout_json(&vtalign(t.path(), &["intersect", "--a", "a.ids", "--b", "b.ids", "--out", "c.ids"]));
    assert_eq!((v["a"].as_u64(), v["b"].as_u64(), v["kept"].as_u64()), (Some(4), Some(3), Some(2)));
    let kept: BTreeSet<String> = std::fs::read_to_string(t.path().join("c.ids")).unwrap().lines().map(String::from).collect();
    assert_eq!(kept, ["x2", "x3"].iter().map(|s| s.to_string()).collect());
}

#[test]
fn config_file_supplies_and_flags_override() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("a.ids"), "x1\n").unwrap();
    std::fs::write(t.path().join("b.ids"), "x1\n").unwrap();
    std::fs::write(t.path().join("cfg.txt"), "# defaults\na = a.ids\nb = b.ids\nout = from-config.ids\n").unwrap();
    stdout_json(&vtalign(t.path(), &["intersect", "--config", "cfg.txt"]));
    assert!(t.path().join("from-config.ids").exists());
    stdout_json(&vtalign(t.path(), &["intersect", "--config", "cfg.txt", "--out", "explicit.ids"]));
    assert!(t.path().join("explicit.ids").exists());

    std::fs::write(t.path().join("bad.txt"), "bogus = 1\n").unwrap();
    assert_eq!(code(&vtalign(t.path(), &["intersect", "--config", "bad.txt"])), 1);
}

#[test]
fn uncovered_pixels_exit_three() {
    let t = tempfile::tempdir().unwrap();
    small_model(t.path());
    let o = vtalign(
        t.path(),
        &["eval-seg-highres", "--model", "m.dtxm", "--corpus", "c", "--out", "hr", "--seed", "0", "--areas", "0.01", "--stride-frac", "1", "--noise", "0"],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn repeated_runs_are_identical() {
    let t = tempfile::tempdir().unwrap();
    small_model(t.path());
    let args = ["eval-seg-highres", "--model", "m.dtxm", "--corpus", "c", "--out", "hr", "--seed", "4", "--areas", "0.1,1"];
    let a = stdout_json(&vtalign(t.path(), &args));
    let first = std::fs::read(t.path().join("hr/shape-00000.dtxs")).unwrap();
    let b = stdout_json(&vtalign(t.path(), &[&args[..], &["--threads", "2"]].concat()));
    assert_eq!(a, b);
    assert_eq!(first, std::fs::read(t.path().join("hr/shape-00000.dtxs")).unwrap());
}

#[test]
fn verbose_logs_steps_to_stderr_only() {
    let t = tempfile::tempdir().unwrap();
    stdout_json(&vtalign(t.path(), &["gen-shapes", "--out", "c", "--seed", "1", "--n", "2", "--height", "56", "--width", "56"]));
    let o = vtalign(t.path(), &["train", "--pairs", "c/pairs.manifest", "--seed", "0", "--out", "m.dtxm", "--steps", "2", "--batch", "2", "--verbose"]);
    let v = stdout_json(&o);
    assert!(v.is_object());
    let events: Vec<Value> = String::from_utf8_lossy(&o.stderr).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events[0]["event"], "config");
    assert!(events.iter().filter(|e| e["event"] == "step").count() >= 2);
}
