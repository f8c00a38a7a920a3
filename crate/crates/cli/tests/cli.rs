use std::process::{Command, Output};

fn dofvo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dofvo")).args(args).output().expect("binary runs")
}

#[test]
fn init_config_prints_a_parseable_template() {
    let out = dofvo(&["init-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dofvo.toml");
    std::fs::write(&path, &text).unwrap();
    let out = dofvo(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "eval"]);
    // The template parses; eval then fails on the missing inputs, a data error.
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(dofvo(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(dofvo(&["--mode", "projective", "run-vo"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 3\n").unwrap();
    assert_eq!(dofvo(&["--config", bad.to_str().unwrap(), "convert-gt"]).status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dofvo.toml");
    std::fs::write(&cfg, format!("[dataset]\nroot = {:?}\n", dir.path().join("absent"))).unwrap();
    let out = dofvo(&["--config", cfg.to_str().unwrap(), "convert-gt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
}

#[test]
fn synthetic_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("seq");
    let root_s = root.to_str().unwrap();
    assert!(dofvo(&["synth-dataset", root_s, "--frames", "8"]).status.success());
    let cfg = root.join("dofvo.toml");
    let cfg_s = cfg.to_str().unwrap();
    for cmd in ["convert-gt", "run-vo", "eval"] {
        let out = dofvo(&["--config", cfg_s, cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(root.join("out/eval_rpe.csv").exists());
    assert!(root.join("out/manifests/eval.json").exists());
}
