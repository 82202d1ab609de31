use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scp_core::experiments::{ExperimentConfig, ExperimentKind};
use scp_core::DensitySpec;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scp")).args(args).output().unwrap()
}

fn scp_run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    scp(&args)
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn small_solve_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&config_path("gaussian_mixture.toml")).unwrap();
    cfg.counts.observed = 20_000;
    cfg.counts.prior = 20_000;
    cfg.counts.solution = 2_000;
    cfg.n_bins = 50;
    cfg.grid = vec![40, 40];
    cfg
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn missing_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scp_run("solve", &tmp.path().join("nope.toml"), &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config_path("gaussian_mixture.toml")).unwrap() + "\nunknown_key = 1\n";
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = scp_run("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("bad.toml"), "{stderr}");
}

#[test]
fn kind_mismatch_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scp_run("weak", &config_path("gaussian_mixture.toml"), &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn support_mismatch_exits_with_assumption_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&config_path("audit_truncated_prior.toml")).unwrap();
    cfg.kind = Some(ExperimentKind::Solve);
    cfg.counts.observed = 20_000;
    cfg.counts.prior = 20_000;
    cfg.n_bins = 20;
    let path = write_config(tmp.path(), "mismatch.toml", &cfg);
    let o = scp_run("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn untruncatable_prior_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_solve_config();
    cfg.prior = DensitySpec::gaussian(vec![9.0, 9.0], 1.0);
    let path = write_config(tmp.path(), "far.toml", &cfg);
    let o = scp_run("solve", &path, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn solve_writes_a_hashed_bundle_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "solve.toml", &small_solve_config());
    let first = tmp.path().join("first");
    let o = scp_run("solve", &path, &first, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let diag: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(diag["n_cells"], 1600);

    let m = manifest(&first);
    assert_eq!(m["kind"], "solve");
    assert_eq!(m["generator"], "chacha8");
    let outputs = m["outputs"].as_array().unwrap();
    let names: Vec<&str> = outputs.iter().map(|f| f["file"].as_str().unwrap()).collect();
    for f in ["heatmap.csv", "observed_pushforward.csv", "prior_pushforward.csv", "solution_samples.csv", "diagnostics.json", "config.resolved.toml"] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }
    for f in outputs {
        let bytes = std::fs::read(first.join(f["file"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"], digest.as_str());
    }
    let header = std::fs::read_to_string(first.join("solution_samples.csv")).unwrap();
    assert!(header.starts_with("l1,l2,q\n"));

    let second = tmp.path().join("second");
    let o = scp_run("solve", &first.join("config.resolved.toml"), &second, &[]);
    assert_eq!(code(&o), 0);
    for f in ["heatmap.csv", "observed_pushforward.csv", "prior_pushforward.csv", "solution_samples.csv", "diagnostics.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "solve.toml", &small_solve_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&scp_run("solve", &path, &a, &[])), 0);
    assert_eq!(code(&scp_run("solve", &path, &b, &["--seed", "7"])), 0);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_ne!(ma["seeds"], mb["seeds"]);
    let expected = scp_core::experiments::config::Seeds::from_base(7);
    assert_eq!(mb["seeds"]["observed"], expected.observed);
    assert_ne!(std::fs::read(a.join("solution_samples.csv")).unwrap(), std::fs::read(b.join("solution_samples.csv")).unwrap());
}

#[test]
fn audit_writes_no_solver_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&config_path("audit.toml")).unwrap();
    cfg.counts.observed = 20_000;
    cfg.counts.prior = 20_000;
    let path = write_config(tmp.path(), "audit.toml", &cfg);
    let out = tmp.path().join("out");
    let o = scp_run("audit", &path, &out, &[]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["degenerate_fraction"], 0.0);
    for f in ["heatmap.csv", "solution_samples.csv", "trace.csv"] {
        assert!(!out.join(f).exists(), "{f}");
    }
    assert!(out.join("diagnostics.json").exists() && out.join("manifest.json").exists());
}

#[test]
fn concrete_fixture_run_writes_both_age_windows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = scp_run("concrete", &config_path("concrete_fixture.toml"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let diag: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(diag["concrete"]["primary"]["strengths"]["n"].as_u64().unwrap() > 0, "{diag}");
    for f in ["heatmap.csv", "heatmap_compare.csv", "solution_samples.csv", "solution_samples_compare.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    let cfg = ExperimentConfig::from_toml(&resolved).unwrap();
    match cfg.data {
        scp_core::experiments::DataSource::Csv { path, .. } => assert!(path.is_absolute()),
        _ => panic!("expected csv data source"),
    }
}
