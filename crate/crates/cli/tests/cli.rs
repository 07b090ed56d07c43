//! CLI integration: exit codes, stage gating through the binary, and a
//! reduced end-to-end run driving every subcommand.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradlab"))
}

fn temp_work(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gradlab-cli-{tag}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn write_small_config(dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "corpus": {"cell_size": 60, "neutral_size": 60, "seed": 5},
  "pretrain": {"max_epochs": 6, "target_accuracy": 0.0},
  "gradiend": {"steps": 400, "eval_interval": 200, "seeds": [0], "batch_size": 8},
  "alpha_grid": [0.01, 0.1],
  "analysis": {"k": 16, "k_grid": [8, 64], "n_perm": 200, "neutral_gradient_cap": 10}
}"#,
    )
    .unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    // Unknown subcommand (clap usage error).
    let status = bin().arg("frobnicate").output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Bad transition name is a configuration error.
    let work = temp_work("usage");
    let out = bin()
        .args(["generate", "--transitions", "G[X]_Nom-Dat", "-o"])
        .arg(&work)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("G[X]_Nom-Dat"), "{stderr}");
    std::fs::remove_dir_all(&work).ok();
}

#[test]
fn missing_stage_exits_3() {
    let work = temp_work("gate");
    let out = bin().arg("pretrain").arg("-o").arg(&work).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    std::fs::remove_dir_all(&work).ok();
}

#[test]
fn reduced_pipeline_via_binary() {
    let work = temp_work("e2e");
    let cfg = write_small_config(&work);
    let run = |sub: &str| {
        let out = bin()
            .arg(sub)
            .arg("--config")
            .arg(&cfg)
            .arg("--transitions")
            .arg("G[F,M]_Nom")
            .arg("-o")
            .arg(&work)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{sub}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };
    run("generate");
    run("pretrain");
    run("gradiend");
    let sweep_out = run("sweep");
    assert!(String::from_utf8_lossy(&sweep_out.stdout).contains("alpha*"));
    run("analyze");
    let report_out = run("report");
    let text = String::from_utf8_lossy(&report_out.stdout);
    assert!(text.contains("gradlab run summary"), "{text}");
    assert!(work.join("reports/summary.txt").exists());

    // Same seed twice: identical dataset manifest hashes (idempotent).
    let manifest_before =
        std::fs::read_to_string(work.join("manifests/generate.json")).unwrap();
    run("generate");
    let manifest_after =
        std::fs::read_to_string(work.join("manifests/generate.json")).unwrap();
    assert_eq!(manifest_before, manifest_after);

    std::fs::remove_dir_all(&work).ok();
}

#[test]
fn transition_list_with_bracket_commas() {
    // Two names whose brackets contain commas must parse as two variants.
    let work = temp_work("split");
    let cfg = write_small_config(&work);
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--transitions", "G[F,M]_Nom,G[F,N]_Dat", "-o"])
        .arg(&work)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::remove_dir_all(&work).ok();
}
