//! End-to-end pipeline test on a reduced configuration: every stage runs,
//! artifacts hash-match their manifests, stage gating rejects missing and
//! stale inputs, and a rerun in a fresh directory is byte-identical.

use std::path::PathBuf;

use gradlab::pipeline::{
    report_hashes, run_analyze, run_generate, run_gradiend, run_pretrain, run_report, run_sweep,
    Layout, PipelineError, RunConfig,
};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus.cell_size = 60;
    cfg.corpus.neutral_size = 60;
    cfg.pretrain.max_epochs = 8;
    cfg.pretrain.target_accuracy = 0.0;
    cfg.transitions = Some(vec!["G[F,M]_Nom".to_string(), "G[F]_Nom-Dat".to_string()]);
    cfg.gradiend.steps = 600;
    cfg.gradiend.eval_interval = 200;
    cfg.gradiend.seeds = vec![0, 1];
    cfg.gradiend.batch_size = 8;
    cfg.alpha_grid = vec![0.01, 0.1, 0.5];
    cfg.analysis.k = 32;
    cfg.analysis.k_grid = vec![8, 32, 128];
    cfg.analysis.n_perm = 400;
    cfg.analysis.neutral_gradient_cap = 20;
    cfg
}

fn temp_work(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gradlab-smoke-{tag}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_all(cfg: &RunConfig, work: &std::path::Path) {
    run_generate(cfg, work).unwrap();
    run_pretrain(cfg, work).unwrap();
    let g = run_gradiend(cfg, work).unwrap();
    assert_eq!(g.selected.len(), 2);
    assert_eq!(g.runs.len(), 4); // 2 variants x 2 seeds
    let sweeps = run_sweep(cfg, work).unwrap();
    assert_eq!(sweeps.len(), 4); // 2 variants x 2 directions
    let products = run_analyze(cfg, work).unwrap();
    assert_eq!(products.correlations.len(), 2);
    run_report(cfg, work).unwrap();
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let cfg = small_config();
    let work_a = temp_work("a");
    let work_b = temp_work("b");
    run_all(&cfg, &work_a);
    run_all(&cfg, &work_b);

    let ha = report_hashes(&Layout::new(&work_a)).unwrap();
    let hb = report_hashes(&Layout::new(&work_b)).unwrap();
    assert!(!ha.is_empty());
    assert_eq!(ha, hb, "report files differ between identical runs");

    // Key artifacts exist.
    for f in [
        "reports/sweeps.csv",
        "reports/correlation_table.csv",
        "reports/heatmaps.csv",
        "reports/pattern_scores.csv",
        "reports/overlap.csv",
        "reports/k_ablation.csv",
        "reports/encoding.csv",
        "reports/summary.txt",
        "model.tlm",
        "datasets/M-Nom.jsonl",
    ] {
        assert!(work_a.join(f).exists(), "{f} missing");
    }

    std::fs::remove_dir_all(&work_a).ok();
    std::fs::remove_dir_all(&work_b).ok();
}

#[test]
fn stage_gating_rejects_missing_and_stale_inputs() {
    let cfg = small_config();
    let work = temp_work("gate");

    // Missing upstream stage.
    match run_pretrain(&cfg, &work) {
        Err(PipelineError::MissingStage { .. }) => {}
        other => panic!("expected MissingStage, got {other:?}"),
    }

    run_generate(&cfg, &work).unwrap();
    run_pretrain(&cfg, &work).unwrap();

    // Tamper with an upstream artifact: gradiend must refuse.
    let target = work.join("datasets/M-Nom.jsonl");
    let mut data = std::fs::read_to_string(&target).unwrap();
    data.push('\n');
    std::fs::write(&target, data).unwrap();
    match run_gradiend(&cfg, &work) {
        Err(PipelineError::StaleArtifact { path, .. }) => {
            assert!(path.contains("M-Nom"), "{path}");
        }
        other => panic!("expected StaleArtifact, got {other:?}"),
    }

    std::fs::remove_dir_all(&work).ok();
}
