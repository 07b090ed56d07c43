//! Pipeline orchestration: the declarative run configuration, per-stage
//! manifests with content hashes, and the six stages (generate, pretrain,
//! gradiend, sweep, analyze, report) shared by the CLI and the acceptance
//! suite.
//!
//! Every stage is a pure function of (config, upstream artifacts); rerunning
//! a stage with the same config and inputs produces byte-identical outputs.
//! Manifests record relative paths and FNV-1a hashes of everything a stage
//! reads and writes, and downstream stages refuse to run on stale inputs.

mod stages;

pub use stages::{
    run_analyze, run_generate, run_gradiend, run_pretrain, run_report, run_sweep,
    AnalyzeProducts, GradiendRunRow, GradiendStageOut, HeatmapOut, SweepRow, SweepSummary,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusError;
use crate::gradiend::GradiendError;
use crate::gradtasks::TaskError;
use crate::hash;
use crate::intervene::{AlphaObjective, SweepError};
use crate::toylm::{Arch, LmsPolicy, ModelError, PretrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {needed:?} has not produced its artifacts yet (required by {stage:?})")]
    MissingStage { stage: String, needed: String },
    #[error("artifact {path} is stale: manifest hash {expected}, current {got}")]
    StaleArtifact {
        path: String,
        expected: String,
        got: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Gradiend(#[from] GradiendError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Process exit code classification: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use PipelineError::*;
        match self {
            Config(_) => 2,
            MissingStage { .. } | StaleArtifact { .. } | Io(_) | Json(_) => 3,
            Corpus(e) => match e {
                CorpusError::Parse { .. } | CorpusError::Io(_) => 3,
                _ => 4,
            },
            Model(e) => match e {
                ModelError::Io(_) | ModelError::BadCheckpoint(_) => 3,
                _ => 4,
            },
            Task(e) => match e {
                TaskError::Io(_) | TaskError::BadCache { .. } | TaskError::StaleCache { .. } => 3,
                _ => 4,
            },
            Gradiend(e) => match e {
                GradiendError::Io(_) | GradiendError::BadCheckpoint(_) => 3,
                _ => 4,
            },
            Sweep(_) | Analysis(_) => 4,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub cell_size: usize,
    pub neutral_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            cell_size: 400,
            neutral_size: 400,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradiendConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_cap: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
}

impl Default for GradiendConfig {
    fn default() -> Self {
        GradiendConfig {
            learning_rate: 3e-4,
            weight_decay: 1e-3,
            steps: 5000,
            eval_interval: 1000,
            eval_cap: 500,
            seeds: vec![0, 1, 2],
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub k: usize,
    pub k_grid: Vec<usize>,
    pub n_perm: usize,
    pub seed: u64,
    /// Neutral sentences used for the neutral gradient source.
    pub neutral_gradient_cap: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            k: 64,
            k_grid: vec![16, 32, 64, 128, 256, 512, 1024, 2048],
            n_perm: 10_000,
            seed: 7,
            neutral_gradient_cap: 100,
        }
    }
}

/// The resolved run configuration; a single declarative file with CLI
/// overrides. Every report embeds this configuration's content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub arch: Arch,
    pub pretrain: PretrainConfig,
    pub slice_name: String,
    /// Cataloged variant names to run; `None` means all 17.
    pub transitions: Option<Vec<String>>,
    pub gradiend: GradiendConfig,
    pub lms: LmsPolicy,
    pub alpha_grid: Vec<f64>,
    pub tau: f64,
    pub alpha_objective: AlphaObjective,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig::default(),
            arch: Arch::DESK,
            pretrain: PretrainConfig::default(),
            slice_name: "layers.1.ffn.w1".to_string(),
            transitions: None,
            gradiend: GradiendConfig::default(),
            lms: LmsPolicy::default(),
            alpha_grid: crate::intervene::default_grid(),
            tau: 0.99,
            alpha_objective: AlphaObjective::TargetArticle,
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let catalog: Vec<String> = crate::paradigm::catalog_transitions()
            .into_iter()
            .map(|(_, t)| t.name())
            .collect();
        if let Some(names) = &self.transitions {
            if names.is_empty() {
                return Err(PipelineError::Config(
                    "transition list must not be empty".to_string(),
                ));
            }
            for n in names {
                if !catalog.contains(n) {
                    return Err(PipelineError::Config(format!(
                        "unknown transition {n:?}; cataloged variants: {}",
                        catalog.join(", ")
                    )));
                }
            }
        }
        if self.alpha_grid.is_empty()
            || self.alpha_grid[0] <= 0.0
            || self.alpha_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(PipelineError::Config(
                "alpha grid must be positive and strictly increasing".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(PipelineError::Config("tau must be in [0, 1]".to_string()));
        }
        if self.gradiend.seeds.is_empty() {
            return Err(PipelineError::Config(
                "at least one gradiend seed is required".to_string(),
            ));
        }
        if self.analysis.k == 0 {
            return Err(PipelineError::Config("k must be positive".to_string()));
        }
        Ok(())
    }

    /// Hash of the canonical JSON rendering, embedded in every report.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hash::hex(hash::hash_bytes(json.as_bytes()))
    }

    /// The transitions this run covers, in catalog order.
    pub fn selected_transitions(&self) -> Vec<crate::paradigm::Transition> {
        let all = crate::paradigm::catalog_transitions();
        match &self.transitions {
            None => all.into_iter().map(|(_, t)| t).collect(),
            Some(names) => all
                .into_iter()
                .map(|(_, t)| t)
                .filter(|t| names.contains(&t.name()))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Manifests and layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Path relative to the work directory.
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
}

pub struct Layout {
    pub work: PathBuf,
}

impl Layout {
    pub fn new(work: &Path) -> Layout {
        Layout {
            work: work.to_path_buf(),
        }
    }

    pub fn datasets(&self) -> PathBuf {
        self.work.join("datasets")
    }

    pub fn model(&self) -> PathBuf {
        self.work.join("model.tlm")
    }

    pub fn pretrain_metrics(&self) -> PathBuf {
        self.work.join("pretrain_metrics.json")
    }

    pub fn caches(&self) -> PathBuf {
        self.work.join("caches")
    }

    pub fn gradiends(&self) -> PathBuf {
        self.work.join("gradiend")
    }

    pub fn reports(&self) -> PathBuf {
        self.work.join("reports")
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.work.join("manifests").join(format!("{stage}.json"))
    }

    pub fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.work)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

/// Filesystem-safe variant name, e.g. "G[F,M]_Nom" -> "G_F-M__Nom".
pub fn sanitize_variant(name: &str) -> String {
    name.replace(['[', ']'], "_").replace(',', "-")
}

pub(crate) fn artifact_ref(layout: &Layout, path: &Path) -> Result<ArtifactRef, PipelineError> {
    Ok(ArtifactRef {
        path: layout.rel(path),
        hash: hash::hex(hash::hash_file(path)?),
    })
}

pub(crate) fn write_manifest(
    layout: &Layout,
    stage: &str,
    config: &RunConfig,
    seeds: Vec<u64>,
    inputs: Vec<ArtifactRef>,
    outputs: Vec<ArtifactRef>,
) -> Result<(), PipelineError> {
    let manifest = Manifest {
        stage: stage.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.content_hash(),
        seeds,
        inputs,
        outputs,
    };
    let path = layout.manifest(stage);
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Loads a stage manifest and re-hashes its outputs; fails with
/// `MissingStage` when absent and `StaleArtifact` on any hash mismatch.
pub fn verify_stage(
    layout: &Layout,
    stage: &str,
    needed_by: &str,
) -> Result<Manifest, PipelineError> {
    let path = layout.manifest(stage);
    if !path.exists() {
        return Err(PipelineError::MissingStage {
            stage: needed_by.to_string(),
            needed: stage.to_string(),
        });
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    for output in &manifest.outputs {
        let full = layout.work.join(&output.path);
        if !full.exists() {
            return Err(PipelineError::StaleArtifact {
                path: output.path.clone(),
                expected: output.hash.clone(),
                got: "missing".to_string(),
            });
        }
        let got = hash::hex(hash::hash_file(&full)?);
        if got != output.hash {
            return Err(PipelineError::StaleArtifact {
                path: output.path.clone(),
                expected: output.hash.clone(),
                got,
            });
        }
    }
    Ok(manifest)
}

/// Maps every emitted-report file under the work directory to its hash;
/// used by the determinism checks.
pub fn report_hashes(layout: &Layout) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let dir = layout.reports();
    if !dir.exists() {
        return Ok(out);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_file() {
            out.insert(
                layout.rel(&path),
                hash::hex(hash::hash_file(&path)?),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_hash_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.content_hash(), RunConfig::default().content_hash());
        let mut other = RunConfig::default();
        other.tau = 0.98;
        assert_ne!(cfg.content_hash(), other.content_hash());
        assert_eq!(cfg.selected_transitions().len(), 17);
    }

    #[test]
    fn unknown_transition_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.transitions = Some(vec!["G[X,Y]_Nom".to_string()]);
        match cfg.validate() {
            Err(PipelineError::Config(msg)) => assert!(msg.contains("G[X,Y]_Nom")),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut cfg = RunConfig::default();
        cfg.transitions = Some(vec!["G[F,M]_Nom".to_string()]);
        cfg.validate().unwrap();
        assert_eq!(cfg.selected_transitions().len(), 1);
    }

    #[test]
    fn config_file_round_trip_with_partial_fields() {
        let dir = std::env::temp_dir().join(format!("gradlab-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        // Partial configs fall back to defaults for missing fields.
        std::fs::write(&path, r#"{"tau": 0.95, "corpus": {"cell_size": 50}}"#).unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.tau, 0.95);
        assert_eq!(cfg.corpus.cell_size, 50);
        assert_eq!(cfg.corpus.neutral_size, 400);
        assert_eq!(cfg.analysis.k, 64);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sanitized_variant_names_are_distinct() {
        let names: Vec<String> = crate::paradigm::catalog_transitions()
            .into_iter()
            .map(|(_, t)| sanitize_variant(&t.name()))
            .collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
        assert_eq!(sanitize_variant("G[F,M]_Nom"), "G_F-M__Nom");
    }

    #[test]
    fn exit_codes_classify() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            PipelineError::MissingStage {
                stage: "sweep".into(),
                needed: "gradiend".into()
            }
            .exit_code(),
            3
        );
        assert_eq!(
            PipelineError::Model(ModelError::NotConverged {
                accuracy: 0.5,
                target: 0.95
            })
            .exit_code(),
            4
        );
    }
}
