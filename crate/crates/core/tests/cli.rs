use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distill_lab::cli::RunManifest;
use distill_lab::config::{ExperimentConfig, PRESETS};

const TINY: &str = r#"
name = "tiny"
vocab_size = 4
max_response_len = 5

[prompts]
n_train = 48
n_validation = 16
n_oracle = 48
max_len = 4

[oracle]
context_order = 3
prompt_feature_dim = 16

[teacher]
context_order = 2
prompt_feature_dim = 16

[student]
context_order = 1
prompt_feature_dim = 16

[sft_teacher]
steps = 40
batch_size = 8
eval_interval = 20

[sft_student]
steps = 40
batch_size = 8
eval_interval = 20

[distill]
batch_size = 8
epochs = 4.0

[distill.optimizer]
learning_rate = 0.01
warmup_steps = 5

[eval]
samples_per_prompt = 2
evals_per_epoch = 3
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distill-lab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run_tiny(tmp: &Path, extra: &[&str]) -> Output {
    let cfg = write_config(tmp, TINY);
    let out = tmp.join("runs");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn run_writes_every_stage_and_resumes_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let first = run_tiny(tmp.path(), &[]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let dir = tmp.path().join("runs/tiny");
    let manifest = RunManifest::load(&dir.join("manifest.json")).unwrap();
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.stage.name()).collect();
    assert_eq!(names, ["gen-prompts", "gen-oracle-data", "sft-teacher", "sft-student", "distill", "analyze"]);
    for stage in &manifest.stages {
        for a in &stage.outputs {
            assert!(dir.join(&a.path).exists(), "{}", a.path);
        }
    }
    for f in ["analysis/verdict.json", "analysis/proxy_golden.svg", "analysis/curves.svg", "distill/teacher_data.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let before = std::fs::read(dir.join("manifest.json")).unwrap();
    let second = run_tiny(tmp.path(), &[]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("manifest.json")).unwrap(), before);

    // A deleted output is regenerated byte for byte.
    let metrics = std::fs::read(dir.join("distill/metrics.csv")).unwrap();
    std::fs::remove_file(dir.join("distill/metrics.csv")).unwrap();
    assert_eq!(run_tiny(tmp.path(), &[]).status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("distill/metrics.csv")).unwrap(), metrics);
    assert_eq!(std::fs::read(dir.join("manifest.json")).unwrap(), before);
}

#[test]
fn fresh_directories_reproduce_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_tiny(a.path(), &[]).status.code(), Some(0));
    assert_eq!(run_tiny(b.path(), &[]).status.code(), Some(0));
    for f in ["manifest.json", "distill/metrics.csv", "analysis/verdict.json", "analysis/curves.svg"] {
        let x = std::fs::read(a.path().join("runs/tiny").join(f)).unwrap();
        let y = std::fs::read(b.path().join("runs/tiny").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn corrupted_output_is_a_checksum_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_tiny(tmp.path(), &["--no-svg"]).status.code(), Some(0));
    let dir = tmp.path().join("runs/tiny");
    assert!(!dir.join("analysis/curves.svg").exists());
    std::fs::write(dir.join("teacher/teacher.ckpt"), "checkpoint v1\ngarbage\n").unwrap();
    let out = run_tiny(tmp.path(), &["--no-svg"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checksum mismatch") && err.contains("teacher.ckpt"), "{err}");
}

#[test]
fn zero_batch_size_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("batch_size = 8\nepochs", "batch_size = 0\nepochs"));
    let out = bin(&["run", cfg.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
}

#[test]
fn unknown_config_and_bad_flags_are_usage_errors() {
    assert_eq!(bin(&["run", "no-such-preset"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["presets", "show", "nope"]).status.code(), Some(2));
}

#[test]
fn presets_list_and_show() {
    let out = bin(&["presets", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let listed: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(listed, PRESETS);
    for name in PRESETS {
        let out = bin(&["presets", "show", name]);
        let cfg = ExperimentConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(cfg.name, name);
    }
}

#[test]
fn compare_and_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_tiny(tmp.path(), &[]).status.code(), Some(0));
    assert_eq!(run_tiny(tmp.path(), &["--seed", "9"]).status.code(), Some(0));
    let m1 = tmp.path().join("runs/tiny/manifest.json");
    let m2 = tmp.path().join("runs/tiny-seed9/manifest.json");
    let report = tmp.path().join("report");
    let (a, b, r) = (m1.to_str().unwrap(), m2.to_str().unwrap(), report.to_str().unwrap());

    let out = bin(&["compare", a, a, "--out-dir", r]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(report.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("epoch,tiny_train_loss,tiny_proxy_fwd_kl,tiny_golden_fwd_kl,tiny#2_train_loss"));
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1..4], f[4..7], "a run compared with itself gives identical curves");
    }
    assert!(report.join("comparison.svg").exists());

    assert_eq!(bin(&["compare", a, b, "--kind", "js", "--out-dir", r]).status.code(), Some(0));
    assert_eq!(bin(&["compare", a, "--out-dir", r]).status.code(), Some(2));

    let metrics = tmp.path().join("runs/tiny/distill/metrics.csv");
    let out = bin(&["analyze", metrics.to_str().unwrap(), "--out-dir", r]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["hacked"].is_boolean());
    assert_eq!(
        std::fs::read(report.join("verdict.json")).unwrap(),
        std::fs::read(tmp.path().join("runs/tiny/analysis/verdict.json")).unwrap()
    );

    std::fs::write(tmp.path().join("bad.csv"), "step,oops\n1,2\n").unwrap();
    let out = bin(&["analyze", tmp.path().join("bad.csv").to_str().unwrap(), "--out-dir", r]);
    assert_eq!(out.status.code(), Some(3));
}
