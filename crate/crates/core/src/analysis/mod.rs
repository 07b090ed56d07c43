//! Quantitative evaluation: encoded-value analysis with the downsampled
//! correlation protocol, probability-shift heatmaps with permutation
//! significance and BH-FDR, LR/GR/SO pattern scoring, and Top-k decoder
//! weight overlap with its k-ablation.

pub mod encoding;
pub mod heatmap;
pub mod overlap;
pub mod stats;

pub use encoding::{correlation_protocol, encoding_report, EncodingReport, SourceEncoding};
pub use heatmap::{
    delta_p, heatmap, instance_article_probs, pattern_score, DeltaPCell, Heatmap,
    HeatmapConfig, PatternReport,
};
pub use overlap::{
    group_overlap_report, k_ablation, overlap, topk_indices, topk_of_weights, AblationPoint,
    OverlapReport,
};
pub use stats::{bh_fdr, cohens_d, paired_permutation_test, pearson, stars, StatError};

use crate::paradigm::Cell;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Stat(#[from] stats::StatError),
    #[error(transparent)]
    Model(#[from] crate::toylm::ModelError),
    #[error(transparent)]
    Gradiend(#[from] crate::gradiend::GradiendError),
    #[error("k = {k} outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("missing task for cell {cell} (label {label})")]
    MissingTask { cell: Cell, label: i8 },
    #[error("group {group} is missing trained variant {variant}")]
    MissingVariant { group: String, variant: String },
    #[error("no samples for source {0}")]
    EmptySource(String),
}
