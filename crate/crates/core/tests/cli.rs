use std::path::Path;
use std::process::{Command, Output};

fn chaoslab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoslab"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("CHAOSLAB_WORKERS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL_RATE: &str = "t_end = 0.5\nn_steps = 50\nn_list = [8, 16, 32, 64]\nn_ref = 1024\nn_replications = 12\nrate_direct_tv = true\n";

#[test]
fn inequalities_pass_with_status_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "n_replications = 4000\n");
    let out = chaoslab(&["inequalities", "--config", &cfg, "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("res/inequalities.csv")).unwrap();
    assert!(text.contains("subgaussian-rademacher-exact,1.0,100.0,0.0,200.0,true"));
    assert!(dir.path().join("res/theorem_constant.json").exists());
}

#[test]
fn prop31_threshold_is_quoted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "n_list = [50]\ndelta = 0.1\nexp_kappa = 2.0\n");
    let out = chaoslab(&["prop31", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0.03125"), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "a.toml", "study = \"plots\"\n");
    let out = chaoslab(&["run", "--config", &unknown], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown study kind"));

    let typo = write(dir.path(), "b.toml", "n_replicatoins = 5\n");
    assert_eq!(chaoslab(&["rate", "--config", &typo], dir.path()).status.code(), Some(2));

    let small_ref = write(dir.path(), "c.toml", "n_list = [32, 64, 128, 256]\nn_ref = 2000\n");
    let out = chaoslab(&["rate", "--config", &small_ref], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("16 * max(n_list) = 4096"));
}

#[test]
fn zero_model_rate_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("model = \"zero\"\n{SMALL_RATE}"));
    let out = chaoslab(&["rate", "--config", &cfg, "--out", "z"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("degenerate zero series"));
    let body = std::fs::read_to_string(dir.path().join("z/rate.csv")).unwrap();
    for line in body.lines().filter(|l| l.starts_with("zero,")) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "0.0", "{line}");
        assert_eq!(cols[5], "0.0", "{line}");
        assert_eq!(cols[7], "0.0", "{line}");
    }
}

#[test]
fn outputs_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_RATE);
    let mut bodies = Vec::new();
    for (i, w) in ["1", "4", "8"].iter().enumerate() {
        let out_dir = format!("w{i}");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_chaoslab"));
        cmd.args(["rate", "--config", &cfg, "--out", &out_dir]).current_dir(dir.path()).env("RUST_LOG", "warn");
        // the env var path for one run, the flag for the others
        if i == 1 {
            cmd.env("CHAOSLAB_WORKERS", w);
        } else {
            cmd.args(["--workers", w]);
        }
        assert_ne!(cmd.output().unwrap().status.code(), Some(2));
        bodies.push(std::fs::read(dir.path().join(&out_dir).join("rate.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
}

#[test]
fn reference_law_is_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "t_end = 0.5\nn_steps = 20\nn_ref = 1024\n");
    let out = chaoslab(&["reference-law", "--config", &cfg, "--out", "law"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("law/reference_law/law.json")).unwrap()).unwrap();
    assert_eq!(meta["n_ref"], 1024);
    assert_eq!(meta["model_id"], "tanh");
}
