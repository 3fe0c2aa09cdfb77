use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resperturb"))
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "attack", "accountant", "rademacher", "sde-demo", "dpsgd-compare"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn accountant_writes_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["accountant", "--seed", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("record.json")).unwrap()).unwrap();
    assert_eq!(record["kind"], "accountant");
    assert_eq!(record["config"]["seed"], "1");
    assert!(record["metrics"]["additive.gamma_min"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# demo\nkind = sde-demo\nsde.rows = 16\nsde.cols = 16\nseed = 3\n").unwrap();
    let out = bin()
        .args(["sde-demo", "--seed", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/record.json")).unwrap();
    assert!(text.contains("\"seed\": 5"));
    assert!(dir.path().join("o/sde_backward.png").exists());
}

#[test]
fn failures_exit_nonzero_with_a_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--set", "dataset.source=csv", "--set", "dataset.path=/no/such.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train: dataset:"), "{err}");

    let out = bin().args(["attack", "--set", "model.blocks=many"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config:"));
}

#[test]
fn mismatched_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.cfg");
    std::fs::write(&cfg, "kind = attack\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`train` subcommand"));
}
