//! Scoring: mask distributions, article probabilities and the
//! language-modeling score (LMS) on the grammar-neutral dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{MaskedInstance, NeutralDataset};
use crate::paradigm::Article;
use crate::rng::Rng;

use super::{instance_ids, ModelCore, ModelError, ModelKind, TinyClm, TinyMlm};

/// Which language-modeling metric a score carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmsMetric {
    /// Masked-token accuracy (encoder models); higher is better.
    Accuracy,
    /// Perplexity (decoder models); lower is better.
    Perplexity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsScore {
    pub value: f64,
    pub metric: LmsMetric,
}

/// Deterministic masking policy for the encoder LMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmsPolicy {
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for LmsPolicy {
    fn default() -> Self {
        LmsPolicy {
            mask_rate: 0.15,
            seed: 0x1a5,
        }
    }
}

impl LmsPolicy {
    /// Masked positions for sentence `index`: each position independently
    /// with probability `mask_rate`, at least one position per sentence.
    /// Forked per index, so results do not depend on evaluation order.
    pub fn positions(&self, index: usize, len: usize) -> Vec<usize> {
        let mut rng = Rng::from_seed(self.seed).fork(&format!("lms/{index}"));
        let mut out: Vec<usize> = (0..len).filter(|_| rng.next_f64() < self.mask_rate).collect();
        if out.is_empty() {
            out.push(rng.below(len));
        }
        out
    }
}

impl TinyMlm {
    /// Softmax over the vocabulary at the single mask position.
    pub fn mask_distribution(&self, instance: &MaskedInstance) -> Result<Vec<f64>, ModelError> {
        if !instance.single_mask() {
            return Err(ModelError::MultiMask {
                found: instance.mask_positions.len(),
            });
        }
        let ids = instance_ids(&self.core, instance)?;
        let fwd = self.core.forward(&ids);
        Ok(self.core.probs_at(&fwd, instance.mask_positions[0]))
    }

    /// P(article) at the mask, aggregating casing variants ("der" + "Der").
    pub fn article_probability(
        &self,
        instance: &MaskedInstance,
        article: Article,
    ) -> Result<f64, ModelError> {
        let probs = self.mask_distribution(instance)?;
        Ok(article_mass(&self.core, &probs, article))
    }

    /// All six article probabilities at the mask.
    pub fn article_probabilities(
        &self,
        instance: &MaskedInstance,
    ) -> Result<[f64; 6], ModelError> {
        let probs = self.mask_distribution(instance)?;
        let mut out = [0.0; 6];
        for (i, art) in Article::ALL.into_iter().enumerate() {
            out[i] = article_mass(&self.core, &probs, art);
        }
        Ok(out)
    }

    /// Argmax article at the mask (over aggregated casing variants).
    pub fn article_argmax(&self, instance: &MaskedInstance) -> Result<Article, ModelError> {
        let probs = self.article_probabilities(instance)?;
        let mut best = 0;
        for i in 1..6 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Ok(Article::ALL[best])
    }

    /// Masked-token accuracy on the neutral dataset under the policy.
    pub fn lms_score(&self, neutral: &NeutralDataset, policy: LmsPolicy) -> LmsScore {
        assert!(!neutral.is_empty(), "neutral dataset is empty");
        let results: Vec<(usize, usize)> = neutral
            .sentences
            .par_iter()
            .enumerate()
            .map(|(index, sentence)| {
                let mut ids = self.core.vocab.encode(sentence);
                let original = ids.clone();
                let positions = policy.positions(index, ids.len());
                for &p in &positions {
                    ids[p] = self.core.vocab.mask();
                }
                let fwd = self.core.forward(&ids);
                let mut hits = 0;
                for &p in &positions {
                    let logits = self.core.logits_at(&fwd, p);
                    let argmax = logits
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i as u32)
                        .unwrap();
                    if argmax == original[p] {
                        hits += 1;
                    }
                }
                (hits, positions.len())
            })
            .collect();
        let hits: usize = results.iter().map(|(h, _)| h).sum();
        let total: usize = results.iter().map(|(_, n)| n).sum();
        LmsScore {
            value: hits as f64 / total as f64,
            metric: LmsMetric::Accuracy,
        }
    }
}

impl TinyClm {
    /// Perplexity of next-token prediction on the neutral dataset.
    pub fn lms_score(&self, neutral: &NeutralDataset, _policy: LmsPolicy) -> LmsScore {
        assert!(!neutral.is_empty(), "neutral dataset is empty");
        let results: Vec<(f64, usize)> = neutral
            .sentences
            .par_iter()
            .map(|sentence| {
                let ids = self.core.vocab.encode(sentence);
                if ids.len() < 2 {
                    return (0.0, 0);
                }
                let fwd = self.core.forward(&ids);
                let mut nll = 0.0;
                for pos in 0..ids.len() - 1 {
                    let probs = self.core.probs_at(&fwd, pos);
                    nll -= probs[ids[pos + 1] as usize].max(f64::MIN_POSITIVE).ln();
                }
                (nll, ids.len() - 1)
            })
            .collect();
        let nll: f64 = results.iter().map(|(l, _)| l).sum();
        let count: usize = results.iter().map(|(_, n)| n).sum();
        LmsScore {
            value: (nll / count as f64).exp(),
            metric: LmsMetric::Perplexity,
        }
    }
}

/// Sum of an article's casing-variant probabilities.
pub(crate) fn article_mass(core: &ModelCore, probs: &[f64], article: Article) -> f64 {
    core.vocab
        .article_variant_ids(article)
        .into_iter()
        .map(|id| probs[id as usize])
        .sum()
}

/// Gradient of mean cross-entropy toward `target` at every mask position of
/// the instance, restricted to the slice. Target token casing follows each
/// masked surface.
pub fn grad_wrt_slice(
    mlm: &TinyMlm,
    slice: &super::ParamSlice,
    instance: &MaskedInstance,
    target: Article,
) -> Result<Vec<f64>, ModelError> {
    grad_wrt_slice_core(&mlm.core, slice, instance, target)
}

pub(crate) fn grad_wrt_slice_core(
    core: &ModelCore,
    slice: &super::ParamSlice,
    instance: &MaskedInstance,
    target: Article,
) -> Result<Vec<f64>, ModelError> {
    slice.matches(&core.params)?;
    let ids = instance_ids(core, instance)?;
    let targets: Vec<u32> = instance
        .masked_surfaces
        .iter()
        .map(|surface| super::article_target_id(&core.vocab, surface, target))
        .collect();
    let (_, grads) = core.loss_and_grad(&ids, &instance.mask_positions, &targets);
    slice.extract(&grads)
}

/// Slice gradient of the unmasked language-modeling loss: every position
/// predicts its own token given the full sentence. Used for neutral-source
/// gradients where nothing is masked.
pub fn grad_unmasked_lm(
    mlm: &TinyMlm,
    slice: &super::ParamSlice,
    sentence: &[String],
) -> Result<Vec<f64>, ModelError> {
    let core = &mlm.core;
    slice.matches(&core.params)?;
    let ids = core.vocab.encode(sentence);
    if ids.len() > core.arch.max_len {
        return Err(ModelError::TooLong {
            got: ids.len(),
            max: core.arch.max_len,
        });
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let (_, grads) = core.loss_and_grad(&ids, &positions, &ids);
    slice.extract(&grads)
}

impl ModelKind {
    pub fn lms_metric(self) -> LmsMetric {
        match self {
            ModelKind::Encoder => LmsMetric::Accuracy,
            ModelKind::Decoder => LmsMetric::Perplexity,
        }
    }
}
