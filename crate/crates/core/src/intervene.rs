//! Interventions on the base model: add a scaled decoded update direction
//! to the selected parameter slice, sweep the step size under the
//! language-modeling-score constraint, and pick the step that maximizes the
//! objective article probability.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::instance_article_probs;
use crate::corpus::{MaskedInstance, NeutralDataset};
use crate::gradiend::GradiendModel;
use crate::paradigm::Article;
use crate::toylm::{LmsMetric, LmsPolicy, ModelError, TinyMlm};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error("no step size satisfies the language-modeling-score constraint")]
    NoCandidates(Box<AlphaSweep>),
    #[error("step grid must be positive, strictly increasing and non-empty")]
    InvalidGrid,
}

/// A decoded update scaled by a step size.
#[derive(Debug, Clone)]
pub struct Intervention<'a> {
    pub gradiend: &'a GradiendModel,
    /// Direction selector, +1 or -1.
    pub h_star: f64,
    pub alpha: f64,
}

impl<'a> Intervention<'a> {
    pub fn new(gradiend: &'a GradiendModel, h_star: f64, alpha: f64) -> Intervention<'a> {
        assert!(alpha.is_finite() && alpha >= 0.0, "alpha must be finite and non-negative");
        Intervention {
            gradiend,
            h_star,
            alpha,
        }
    }
}

/// Returns a copy of the base model with the slice updated by
/// alpha * dec(h*); the base model itself is untouched and alpha = 0
/// reproduces it bit-identically.
pub fn apply(base: &TinyMlm, iv: &Intervention) -> Result<TinyMlm, ModelError> {
    iv.gradiend.slice.matches(&base.core.params)?;
    let mut modified = base.clone();
    if iv.alpha != 0.0 {
        let direction = iv.gradiend.decode(iv.h_star);
        iv.gradiend
            .slice
            .add_scaled(&mut modified.core.params, &direction, iv.alpha)?;
    }
    Ok(modified)
}

/// Default step-size grid.
pub fn default_grid() -> Vec<f64> {
    vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0]
}

/// Which article probability the step selection maximizes. The default
/// follows the target article of the directed transition; the source
/// reading is exposed as a configuration switch and recorded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaObjective {
    TargetArticle,
    SourceArticle,
}

impl AlphaObjective {
    pub fn as_str(self) -> &'static str {
        match self {
            AlphaObjective::TargetArticle => "target",
            AlphaObjective::SourceArticle => "source",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRecord {
    pub alpha: f64,
    pub lms: f64,
    pub candidate: bool,
    /// Mean probability of the objective article on the evaluation dataset.
    pub mean_objective_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSweep {
    pub tau: f64,
    pub base_lms: f64,
    pub metric: LmsMetric,
    pub objective: AlphaObjective,
    pub objective_article: Article,
    pub records: Vec<AlphaRecord>,
    pub alpha_star: Option<f64>,
}

/// The candidate maximizing the objective probability, ties broken toward
/// the smaller step. Pure set semantics: invariant to record order.
pub fn select_alpha_star(records: &[AlphaRecord]) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.candidate)
        .min_by(|a, b| {
            b.mean_objective_prob
                .partial_cmp(&a.mean_objective_prob)
                .unwrap()
                .then(a.alpha.partial_cmp(&b.alpha).unwrap())
        })
        .map(|r| r.alpha)
}

/// Candidate rule: accuracy metrics keep at least tau of the base score,
/// perplexity metrics stay below base / tau.
pub fn is_candidate(metric: LmsMetric, score: f64, base: f64, tau: f64) -> bool {
    match metric {
        LmsMetric::Accuracy => score >= tau * base,
        LmsMetric::Perplexity => score <= base / tau,
    }
}

/// Sweeps the step grid for one directed intervention: per step size the
/// neutral-set LMS and the mean objective-article probability on the
/// evaluation dataset; candidates satisfy the tau constraint; the selected
/// step maximizes the objective probability (ties toward the smaller step).
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    base: &TinyMlm,
    gradiend: &GradiendModel,
    h_star: f64,
    grid: &[f64],
    neutral: &NeutralDataset,
    policy: LmsPolicy,
    tau: f64,
    eval_dataset: &[MaskedInstance],
    objective_article: Article,
    objective: AlphaObjective,
) -> Result<AlphaSweep, SweepError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] <= 0.0 {
        return Err(SweepError::InvalidGrid);
    }
    let base_lms = base.lms_score(neutral, policy);
    let art_idx = Article::ALL
        .iter()
        .position(|a| *a == objective_article)
        .unwrap();

    let records: Vec<AlphaRecord> = grid
        .par_iter()
        .map(|&alpha| -> Result<AlphaRecord, SweepError> {
            let modified = apply(base, &Intervention::new(gradiend, h_star, alpha))?;
            let lms = modified.lms_score(neutral, policy);
            let probs = instance_article_probs(&modified, eval_dataset)?;
            let mean_prob =
                probs.iter().map(|p| p[art_idx]).sum::<f64>() / probs.len().max(1) as f64;
            Ok(AlphaRecord {
                alpha,
                lms: lms.value,
                candidate: is_candidate(base_lms.metric, lms.value, base_lms.value, tau),
                mean_objective_prob: mean_prob,
            })
        })
        .collect::<Result<_, _>>()?;

    let alpha_star = select_alpha_star(&records);
    let sweep = AlphaSweep {
        tau,
        base_lms: base_lms.value,
        metric: base_lms.metric,
        objective,
        objective_article,
        records,
        alpha_star,
    };
    if sweep.alpha_star.is_none() {
        return Err(SweepError::NoCandidates(Box::new(sweep)));
    }
    Ok(sweep)
}
