use std::path::Path;
use std::process::{Command, Output};

use visracer::config::OUTPUT_ROOT_ENV;

fn visracer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visracer"))
        .args(args)
        .current_dir(dir)
        .env(OUTPUT_ROOT_ENV, dir.join("runs"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn track_gen_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = visracer(dir.path(), &["track", "gen", "--name", "circle", "--out", "c.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = visracer(dir.path(), &["track", "validate", "c.json"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    // circle of radius 50
    let len: f64 = out.split("length_m=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((len - 2.0 * std::f64::consts::PI * 50.0).abs() < 0.5, "{out}");

    // regenerating identical bytes is allowed, different bytes are not
    assert!(visracer(dir.path(), &["track", "gen", "--name", "circle", "--out", "c.json"]).status.success());
    let o = visracer(dir.path(), &["track", "gen", "--name", "stadium", "--out", "c.json"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn unknown_track_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = visracer(dir.path(), &["track", "gen", "--name", "nope", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_track_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.json"), "{\"format_version\": 1, \"width\": 10}").unwrap();
    let o = visracer(dir.path(), &["track", "validate", "t.json"]);
    assert!(!o.status.success());
}

#[test]
fn bad_config_exits_2_and_missing_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"no_such_field\": 1}").unwrap();
    let o = visracer(dir.path(), &["--config", "bad.json", "config"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = visracer(dir.path(), &["--config", "missing.json", "config"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn printed_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = visracer(dir.path(), &["--profile", "full", "config"]);
    assert!(o.status.success());
    std::fs::write(dir.path().join("full.json"), &o.stdout).unwrap();
    let o2 = visracer(dir.path(), &["--config", "full.json", "config"]);
    assert_eq!(o.stdout, o2.stdout);
}

#[test]
fn eval_without_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = visracer(dir.path(), &["eval", "--agent", "vision", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("vision-seed1") && err.contains("policy.bin"), "{err}");
}

#[test]
fn eval_repr_without_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = visracer(dir.path(), &["eval-repr"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
