//! Desk-scale laboratory for gradient-feature analysis of German definite
//! article transitions.
//!
//! The pipeline trains a tiny masked language model on a synthetic
//! gender-case corpus, learns one-dimensional gradient-autoencoder update
//! directions per article transition, intervenes on the base model under a
//! language-modeling-score constraint, and runs the statistical analysis
//! (encoding correlations, probability-shift heatmaps, rule/spillover
//! pattern scores, Top-k weight overlap).
//!
//! Modules mirror the pipeline stages:
//!
//! * [`paradigm`] - the 3x4 German definite-singular-article grid, the
//!   transition catalog and the LR/GR/SO expectation patterns.
//! * [`corpus`] - synthetic dataset generation, annotated-corpus ingestion,
//!   filtering and splits.
//! * [`toylm`] - a tiny transformer MLM/CLM with exact reverse-mode
//!   gradients and parameter-slice selection.
//! * [`gradtasks`] - swapped/identity gradient tasks, batch gradient
//!   samples and the oversampled round-robin sampler.
//! * [`gradiend`] - the one-dimensional bottleneck gradient autoencoder.
//! * [`intervene`] - applying decoded update directions under the
//!   language-modeling-score constraint.
//! * [`analysis`] - correlations, probability-shift statistics with
//!   permutation significance and BH-FDR, pattern scoring, Top-k overlap.
//! * [`pipeline`] - configuration, manifests and stage orchestration used
//!   by the CLI and the acceptance suite.

pub mod analysis;
pub mod corpus;
pub mod gradiend;
pub mod gradtasks;
pub mod hash;
pub mod intervene;
pub mod paradigm;
pub mod pipeline;
pub mod rng;
pub mod toylm;
