use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_replica-lab"))
}

const CONFIG: &str = r#"
experiment_id = "cli"
n_grid = [4, 8]
n_disorder = 4
seed = 9
chains = 4

[model]
family = "random-field"

[mcmc]
burn_in = 20
samples = 200

[[estimators]]
kind = "thermal-variance"
k = ["1-1"]

[[estimators]]
kind = "mean-gap"
k = ["1"]
"#;

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("REPLICA_LAB_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin().args(["report", "--svg", "--in"]).arg(&out).status().unwrap();
    assert!(status.success());
    let thermal = fs::read_to_string(out.join("thermal_variance.csv")).unwrap();
    assert!(thermal.lines().next().unwrap().contains("bound"));
    assert!(out.join("mean_gap.svg").exists());
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["run", "--no-gate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env("REPLICA_LAB_SEED", seed)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "a"), run("2", "c"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, CONFIG.replace("n_grid = [4, 8]", "n_grid = [8, 4]")).unwrap();
    assert_eq!(bin().args(["run", "--config"]).arg(&bad).status().unwrap().code(), Some(1));

    let missing = dir.path().join("missing.toml");
    assert_eq!(bin().args(["oracle-check", "--config"]).arg(&missing).status().unwrap().code(), Some(3));

    let frozen = dir.path().join("frozen.toml");
    fs::write(&frozen, CONFIG).unwrap();
    let out = bin().args(["oracle-check", "--config"]).arg(&frozen).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    assert_eq!(bin().args(["report", "--in"]).arg(dir.path()).status().unwrap().code(), Some(3));
    fs::write(dir.path().join("results.csv"), "not,a,results,file\n").unwrap();
    assert_eq!(bin().args(["report", "--in"]).arg(dir.path()).status().unwrap().code(), Some(1));
}
