//! Smoke tests against the compiled binary: exit statuses and files on disk.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn trimabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimabs"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn params_exit_zero() {
    let cfg = configs().join("jordan.toml");
    let out = trimabs(&["--config", cfg.to_str().unwrap(), "params"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("rho 0.48\n"));
}

#[test]
fn exit_statuses_reach_the_shell() {
    assert_eq!(
        trimabs(&["--config", "/nonexistent/trimabs.toml", "params"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(trimabs(&["no-such-command"]).status.code(), Some(2));
    let cfg = configs().join("one_state.toml");
    let out = trimabs(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "/nonexistent/dir/m.txt",
        "build",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn build_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("jordan.toml");
    let first = dir.path().join("a.txt");
    let second = dir.path().join("b.txt");
    for path in [&first, &second] {
        let out = trimabs(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
            "build",
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let a = std::fs::read(&first).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(&second).unwrap());
}
