//! End-to-end smoke tests through the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deconfrec"))
}

fn tiny_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "dataset": { "synthetic": {
            "users": 25, "items_a": 30, "items_b": 30, "latent_dim": 5,
            "sdc_a": 1, "sdc_b": 1, "cdc": 1, "density": 0.12
        }},
        "dim": 4, "layers": 1,
        "phase1_epochs": 2, "phase2_epochs": 2, "phase3_epochs": 2,
        "batch_size": 64, "j_sd_a": 2, "j_sd_b": 2, "j_cd": 2,
        "eval_negatives": 15, "train_negatives": 2,
        "fusion_dim": 8, "hidden1": 6, "hidden2": 5, "q": 3,
        "adversarial_hidden": 4, "seed": seed
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_then_refuse_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out_dir = dir.path().join("data");
    let run = |force: bool| {
        let mut c = bin();
        c.args(["gen", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir);
        if force {
            c.arg("--force");
        }
        c.output().unwrap()
    };
    ok(&run(false));
    assert!(out_dir.join("domain_a.tsv").exists());
    let second = run(false);
    assert!(!second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("--force"));
    ok(&run(true));
}

#[test]
fn pipeline_produces_report_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["pipeline", "--config"])
        .arg(&cfg)
        .args(["--seed", "42", "--variant", "coarse", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 42);
    assert_eq!(report["variant"], "coarse");
    assert!(out_dir.join("timings.json").exists());
}

#[test]
fn staged_commands_chain_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let out_dir = dir.path().join("run");
    for sub in ["pretrain", "disentangle", "train", "evaluate"] {
        let out = bin()
            .args([sub, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        ok(&out);
    }
    assert!(out_dir.join("phase1/manifest.json").exists());
    assert!(out_dir.join("phase2/manifest.json").exists());
    assert!(out_dir.join("phase3/manifest.json").exists());
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3);
    let out_dir = dir.path().join("sweep");
    let out = bin()
        .args(["sweep", "--parameter", "alpha", "--values", "0.5,2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    ok(&out);
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn bad_variant_exits_nonzero() {
    let out = bin()
        .args(["pipeline", "--variant", "bogus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("variant"));
}
