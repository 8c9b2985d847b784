use std::path::PathBuf;
use std::process::{Command, Output};

fn smoke() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdmagym")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_eval_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let models = dir.path().join("models");
    let models = models.to_str().unwrap();

    let o = run(&["train", "--config", cfg, "--seed", "2", "--out", models]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("agent 0"));
    assert!(dir.path().join("models/agent_0.mrng").exists());

    let eval = dir.path().join("eval");
    let o = run(&["eval", "--config", cfg, "--policy", "drl", "--models", models, "--out", eval.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("drl,2,"));

    let bench = dir.path().join("bench");
    let model = dir.path().join("models/agent_0.mrng");
    let o = run(&["bench", "--model", model.to_str().unwrap(), "--runs", "1000", "--out", bench.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(bench.join("bench.csv").exists());
}

#[test]
fn baselines_run_without_models() {
    let dir = tempfile::tempdir().unwrap();
    for policy in ["dcpc", "maxpower"] {
        let o = run(&["eval", "--config", smoke().to_str().unwrap(), "--policy", policy, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success());
        assert!(stdout(&o).contains(policy));
    }
}

#[test]
fn variance_study_prints_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "variance-study",
        "--config",
        smoke().to_str().unwrap(),
        "--runs",
        "3",
        "--across-runs",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    for mode in ["independent", "across_agents", "across_runs"] {
        assert!(s.contains(mode), "{s}");
    }
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nbogus = 1\n").unwrap();
    let o = run(&["train", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = run(&["eval", "--policy", "drl", "--config", smoke().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());

    let o = run(&["bench", "--model", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}
