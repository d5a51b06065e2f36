use std::path::Path;
use std::process::{Command, Output};

use perfnet::engine::StepSchedule;
use perfnet::harness::preset;

fn perfnet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfnet"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("PERFNET_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_gaussian() -> perfnet::harness::ExperimentConfig {
    let mut cfg = preset::gaussian_mean();
    cfg.seeds = vec![0, 1];
    cfg.run.iterations = 2000;
    cfg.run.record_every = 100;
    cfg
}

#[test]
fn run_writes_artifacts_and_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, small_gaussian().to_toml().unwrap()).unwrap();
    let out = perfnet(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("gaussian_mean");
    for file in ["manifest.json", "config.toml", "0.9/aggregate.csv", "0.9/ratefit.json", "0.9/theory.json"] {
        assert!(root.join(file).exists(), "{file}");
    }
    let csv = root.join("0.9").join("0").join("metrics.csv");
    let rate = perfnet(dir.path(), &["rate-check", csv.to_str().unwrap(), "--metric", "consensus_sq"]);
    assert_eq!(rate.status.code(), Some(0));
    let fit: serde_json::Value = serde_json::from_slice(&rate.stdout).unwrap();
    assert!(fit["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn divergence_below_threshold_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_gaussian();
    cfg.sweep = None;
    cfg.steps = StepSchedule::Constant { gamma: 5.0 };
    let path = dir.path().join("wild.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = perfnet(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(perfnet(dir.path(), &["run", "no_such_preset"]).status.code(), Some(2));
    let text = small_gaussian().to_toml().unwrap();
    for (k, bad) in [format!("surprise = 1\n{text}"), format!("{text}\nsurprise = 1\n"), text.replace("config_version = 1", "config_version = 9")]
        .iter()
        .enumerate()
    {
        let path = dir.path().join(format!("bad{k}.toml"));
        std::fs::write(&path, bad).unwrap();
        assert_eq!(perfnet(dir.path(), &["run", path.to_str().unwrap()]).status.code(), Some(2), "{bad}");
    }
}

#[test]
fn dataset_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "1.0,2.0,0\n1.0,oops,1\n").unwrap();
    let mut cfg = preset::spam_logistic();
    let s = cfg.environment.strategic.as_mut().unwrap();
    s.synthetic = None;
    s.dataset = Some(data);
    let path = dir.path().join("spam.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = perfnet(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oracle_subcommands_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let fp = perfnet(dir.path(), &["fixed-point", "gaussian_mean"]);
    assert_eq!(fp.status.code(), Some(0));
    let text = String::from_utf8(fp.stdout).unwrap();
    assert!(text.contains("closed_form"));
    let curves = dir.path().join("curves");
    let th = perfnet(dir.path(), &["theory", "gaussian_mean", "--curves", curves.to_str().unwrap()]);
    assert_eq!(th.status.code(), Some(0));
    assert!(curves.join("0.9.json").exists());
}

#[test]
fn disconnected_baseline_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, small_gaussian().to_toml().unwrap()).unwrap();
    let out = perfnet(dir.path(), &["baseline", "--config", path.to_str().unwrap(), "--disconnected", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("gaussian_mean/baseline_disconnected/0/isolated.csv").exists());
}
