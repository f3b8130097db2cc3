use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-align"))
}

fn run_in(dir: &Path, args: &[&str], threads: &str) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .unwrap()
}

const SWEEP: &str = r#"
experiment = "snr_sweep"
seed = 11
trials = 40
n_elements = 12
l_values = [3, 5]
snr_db = [-5.0, 10.0]
noiseless = true
"#;

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SWEEP).unwrap();
    let a = run_in(dir.path(), &["run", "c.toml", "--out", "a"], "1");
    let b = run_in(dir.path(), &["run", "c.toml", "--out", "b"], "4");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success());
    let ca = fs::read(dir.path().join("a/snr_sweep.csv")).unwrap();
    let cb = fs::read(dir.path().join("b/snr_sweep.csv")).unwrap();
    assert_eq!(ca, cb);

    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,method,n,l,snr_db,measurements,mnap,ci95,extra"
    );
    // 3 SNRs x (2 L values + random)
    assert_eq!(lines.count(), 9);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config_dialect"], "toml");
    assert!(manifest["effective_config"].as_str().unwrap().contains("snr_sweep"));
}

#[test]
fn overrides_change_the_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SWEEP).unwrap();
    let a = run_in(dir.path(), &["run", "c.toml", "--out", "a"], "2");
    let b = run_in(dir.path(), &["run", "c.toml", "--out", "b", "--seed", "12", "--trials", "10"], "2");
    assert!(a.status.success() && b.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/snr_sweep.csv")).unwrap(),
        fs::read(dir.path().join("b/snr_sweep.csv")).unwrap()
    );
    let manifest = fs::read_to_string(dir.path().join("b/manifest.json")).unwrap();
    assert!(manifest.contains("\"trials\": 10"));
}

#[test]
fn missing_trials_fails_with_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SWEEP.replace("trials = 40\n", "")).unwrap();
    let out = run_in(dir.path(), &["run", "c.toml", "--out", "o"], "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`trials`"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "experiment = \"discrete\"\nseed = 1\ntrials = 3\nn_elements = 4\nomega = [0.0, 1.0, 1.0]\n";
    fs::write(dir.path().join("bad.toml"), cfg).unwrap();
    let out = run_in(dir.path(), &["validate", "bad.toml"], "1");
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5") && err.contains("distinct"), "{err}");

    let cfg = "experiment = \"snr_sweep\"\nl_values = [2]\n";
    fs::write(dir.path().join("bad.toml"), cfg).unwrap();
    let err = String::from_utf8_lossy(&run_in(dir.path(), &["validate", "bad.toml"], "1").stderr).into_owned();
    for needle in ["`seed`", "`trials`", "`n_elements`", "L >= 3"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }

    fs::write(dir.path().join("ok.toml"), SWEEP).unwrap();
    let out = run_in(dir.path(), &["validate", "ok.toml"], "1");
    assert!(out.status.success());
}

#[test]
fn runtime_failure_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // the output path is an existing file, so creating the directory fails
    fs::write(dir.path().join("blocker"), "").unwrap();
    fs::write(dir.path().join("c.toml"), SWEEP.replace("trials = 40", "trials = 2")).unwrap();
    let out = run_in(dir.path(), &["run", "c.toml", "--out", "blocker/sub"], "1");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn every_experiment_kind_runs() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        "experiment = \"convergence\"\nseed = 1\ntrials = 4\nn_elements = 6\nsnr_db = [0.0]\nmethods = [\"proposed\", \"random\", \"closed_form\", \"linear\"]\nphi = [0.0, 1.0, 2.0, 4.0]\n",
        "experiment = \"discrete\"\nseed = 1\ntrials = 4\nn_elements = 5\nomega_psk = 4\nprobe_phases = [0.0, 1.5707963267948966, 3.141592653589793]\n",
        "experiment = \"rmse\"\nseed = 1\ntrials = 30\nsnr_db = [0.0, 10.0]\nformat = \"json\"\n[rmse]\ntheta_points = 3\nmagnitudes = [1.0]\n",
        "experiment = \"harvest\"\nseed = 1\ntrials = 2\nsnr_db = [0.0]\n[geometry]\nsides = [2, 3]\n",
    ];
    for (i, cfg) in configs.iter().enumerate() {
        let name = format!("c{i}.toml");
        fs::write(dir.path().join(&name), cfg).unwrap();
        let out = run_in(dir.path(), &["run", &name, "--out", &format!("o{i}")], "2");
        assert!(out.status.success(), "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o2/rmse.json")).unwrap()).unwrap();
    // 2 SNRs x 3 thetas x (linear + ml)
    assert_eq!(json.as_array().unwrap().len(), 12);
    let harvest = fs::read_to_string(dir.path().join("o3/harvest.csv")).unwrap();
    assert!(harvest.contains("genie") && harvest.contains("harvested_dbm="));
}
