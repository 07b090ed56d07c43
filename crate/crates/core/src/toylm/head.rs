//! Article classification head for the decoder variant: a linear six-class
//! classifier fed by the mean-pooled final hidden states of the N positions
//! after the mask token. Core parameters stay frozen while the head trains.

use rayon::prelude::*;

use crate::corpus::{CellDataset, MaskedInstance};
use crate::paradigm::Article;
use crate::rng::Rng;

use super::model::softmax_inplace;
use super::params::Mat;
use super::{instance_ids, ModelError, TinyClm};

#[derive(Debug, Clone, PartialEq)]
pub struct ArticleHead {
    pub n_pool: usize,
    /// d_model x 6 weights.
    pub w: Mat,
    pub b: [f64; 6],
}

impl ArticleHead {
    fn logits(&self, pooled: &[f64]) -> [f64; 6] {
        let mut out = self.b;
        for (i, &x) in pooled.iter().enumerate() {
            let wr = self.w.row(i);
            for (o, &wv) in wr.iter().enumerate() {
                out[o] += x * wv;
            }
        }
        out
    }
}

/// Positions pooled for a mask at `pos`: the next `n_pool` positions, capped
/// at the sentence end (always at least one in our frames, where an article
/// never ends a sentence).
fn pooled_positions(pos: usize, len: usize, n_pool: usize) -> Vec<usize> {
    let end = (pos + 1 + n_pool).min(len);
    if pos + 1 >= len {
        // Degenerate sentence-final mask: pool the mask position itself.
        vec![pos]
    } else {
        (pos + 1..end).collect()
    }
}

impl TinyClm {
    /// Six-class article distribution at the instance's single mask.
    pub fn article_distribution(&self, instance: &MaskedInstance) -> Result<[f64; 6], ModelError> {
        let head = self.head.as_ref().expect("article head not trained");
        if !instance.single_mask() {
            return Err(ModelError::MultiMask {
                found: instance.mask_positions.len(),
            });
        }
        let ids = instance_ids(&self.core, instance)?;
        let fwd = self.core.forward(&ids);
        let positions = pooled_positions(instance.mask_positions[0], ids.len(), head.n_pool);
        let d = self.core.arch.d_model;
        let mut pooled = vec![0.0; d];
        for &p in &positions {
            for (i, &h) in fwd.hidden(p).iter().enumerate() {
                pooled[i] += h;
            }
        }
        let inv = 1.0 / positions.len() as f64;
        for v in pooled.iter_mut() {
            *v *= inv;
        }
        let mut logits = head.logits(&pooled);
        softmax_inplace(&mut logits);
        Ok(logits)
    }

    /// Gradient of the head cross-entropy toward `target`, restricted to a
    /// core parameter slice (the head makes gradients flow through the whole
    /// decoder despite left-to-right attention).
    pub fn grad_wrt_slice(
        &self,
        slice: &super::ParamSlice,
        instance: &MaskedInstance,
        target: Article,
    ) -> Result<Vec<f64>, ModelError> {
        let head = self.head.as_ref().expect("article head not trained");
        slice.matches(&self.core.params)?;
        if !instance.single_mask() {
            return Err(ModelError::MultiMask {
                found: instance.mask_positions.len(),
            });
        }
        let ids = instance_ids(&self.core, instance)?;
        let fwd = self.core.forward(&ids);
        let positions = pooled_positions(instance.mask_positions[0], ids.len(), head.n_pool);
        let d = self.core.arch.d_model;
        let mut pooled = vec![0.0; d];
        for &p in &positions {
            for (i, &h) in fwd.hidden(p).iter().enumerate() {
                pooled[i] += h;
            }
        }
        let inv = 1.0 / positions.len() as f64;
        for v in pooled.iter_mut() {
            *v *= inv;
        }
        let mut probs = head.logits(&pooled);
        softmax_inplace(&mut probs);
        let target_idx = Article::ALL.iter().position(|a| *a == target).unwrap();
        let mut dlogits = probs;
        dlogits[target_idx] -= 1.0;
        // d pooled = W dlogits; distribute evenly over pooled positions.
        let mut dpooled = vec![0.0; d];
        for i in 0..d {
            let wr = head.w.row(i);
            dpooled[i] = dlogits.iter().zip(wr).map(|(g, w)| g * w).sum::<f64>();
        }
        let rows: Vec<(usize, Vec<f64>)> = positions
            .iter()
            .map(|&p| (p, dpooled.iter().map(|v| v * inv).collect()))
            .collect();
        let grads = self.core.backward_from_hidden(&fwd, &rows);
        slice.extract(&grads)
    }
}

/// Trains the six-class head on single-mask train instances with the core
/// frozen: features are pooled hidden states computed once, the classifier
/// is fit with Adam on softmax cross-entropy.
pub fn train_article_head(
    clm: &TinyClm,
    cells: &[CellDataset],
    n_pool: usize,
    seed: u64,
) -> Result<ArticleHead, ModelError> {
    if n_pool == 0 {
        return Err(ModelError::BadPoolingLength);
    }
    let d = clm.core.arch.d_model;

    // Frozen-core features.
    let mut examples: Vec<(&MaskedInstance, usize)> = Vec::new();
    for ds in cells {
        for inst in &ds.train {
            if inst.single_mask() {
                let label = Article::ALL
                    .iter()
                    .position(|a| *a == inst.factual_article)
                    .unwrap();
                examples.push((inst, label));
            }
        }
    }
    if examples.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let features: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|(inst, _)| {
            let ids = instance_ids(&clm.core, inst)?;
            let fwd = clm.core.forward(&ids);
            let positions = pooled_positions(inst.mask_positions[0], ids.len(), n_pool);
            let mut pooled = vec![0.0; d];
            for &p in &positions {
                for (i, &h) in fwd.hidden(p).iter().enumerate() {
                    pooled[i] += h;
                }
            }
            let inv = 1.0 / positions.len() as f64;
            for v in pooled.iter_mut() {
                *v *= inv;
            }
            Ok(pooled)
        })
        .collect::<Result<_, ModelError>>()?;

    let mut rng = Rng::from_seed(seed).fork("article-head");
    let mut head = ArticleHead {
        n_pool,
        w: Mat::gaussian(d, 6, 0.02, &mut rng),
        b: [0.0; 6],
    };
    // Adam on the head parameters only.
    let (mut mw, mut vw) = (vec![0.0; d * 6], vec![0.0; d * 6]);
    let (mut mb, mut vb) = ([0.0; 6], [0.0; 6]);
    let (b1, b2, eps, lr): (f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 1e-2);
    let mut t = 0u64;
    let epochs = 200;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        rng.fork(&format!("epoch/{epoch}")).shuffle(&mut order);
        for chunk in order.chunks(64) {
            let mut gw = vec![0.0; d * 6];
            let mut gb = [0.0; 6];
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &features[i];
                let label = examples[i].1;
                let mut probs = head.logits(x);
                softmax_inplace(&mut probs);
                probs[label] -= 1.0;
                for (j, &xv) in x.iter().enumerate() {
                    for o in 0..6 {
                        gw[j * 6 + o] += inv * xv * probs[o];
                    }
                }
                for o in 0..6 {
                    gb[o] += inv * probs[o];
                }
            }
            t += 1;
            let bc1 = 1.0 - b1.powi(t as i32);
            let bc2 = 1.0 - b2.powi(t as i32);
            for i in 0..d * 6 {
                mw[i] = b1 * mw[i] + (1.0 - b1) * gw[i];
                vw[i] = b2 * vw[i] + (1.0 - b2) * gw[i] * gw[i];
                head.w.data[i] -= lr * (mw[i] / bc1) / ((vw[i] / bc2).sqrt() + eps);
            }
            for o in 0..6 {
                mb[o] = b1 * mb[o] + (1.0 - b1) * gb[o];
                vb[o] = b2 * vb[o] + (1.0 - b2) * gb[o] * gb[o];
                head.b[o] -= lr * (mb[o] / bc1) / ((vb[o] / bc2).sqrt() + eps);
            }
        }
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_cell_dataset, generate_neutral_dataset, Lexicon};
    use crate::paradigm::Cell;
    use crate::toylm::{pretrain_clm, Arch, ParamSlice, PretrainConfig};

    fn small_clm() -> (TinyClm, Vec<CellDataset>) {
        let lex = Lexicon::builtin();
        let cells: Vec<CellDataset> = Cell::all()
            .into_iter()
            .map(|z| generate_cell_dataset(&lex, z, 30, 17).unwrap())
            .collect();
        let neutral = generate_neutral_dataset(&lex, 30, 17).unwrap();
        let cfg = PretrainConfig {
            max_epochs: 3,
            target_accuracy: 0.0,
            seed: 1,
            ..PretrainConfig::default()
        };
        let (clm, _) = pretrain_clm(Arch::DESK, &cells, &neutral, cfg).unwrap();
        (clm, cells)
    }

    #[test]
    fn head_training_keeps_core_frozen() {
        let (mut clm, cells) = small_clm();
        let before = clm.param_checksum();
        let head = train_article_head(&clm, &cells, 3, 0).unwrap();
        assert_eq!(clm.param_checksum(), before);
        clm.head = Some(head);
        // Headed model produces a proper 6-class distribution.
        let inst = &cells[0].val[0];
        let dist = clm.article_distribution(inst).unwrap();
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_pooling_length_is_rejected() {
        let (clm, cells) = small_clm();
        assert!(matches!(
            train_article_head(&clm, &cells, 0, 0),
            Err(ModelError::BadPoolingLength)
        ));
    }

    #[test]
    fn head_gradient_matches_finite_differences_on_slice() {
        let (mut clm, cells) = small_clm();
        let head = train_article_head(&clm, &cells, 3, 0).unwrap();
        clm.head = Some(head);
        let slice = ParamSlice::resolve(&clm.core.params, "layers.0.ffn.w1").unwrap();
        let inst = &cells[2].val[0];
        let target = Article::Dem;
        let grad = clm.grad_wrt_slice(&slice, inst, target).unwrap();

        // Finite differences through forward + head loss.
        let loss = |clm: &TinyClm| -> f64 {
            let probs = clm.article_distribution(inst).unwrap();
            let idx = Article::ALL.iter().position(|a| *a == target).unwrap();
            -probs[idx].max(f64::MIN_POSITIVE).ln()
        };
        let mut rng = crate::rng::Rng::from_seed(3);
        let step = 1e-5;
        for _ in 0..8 {
            let idx = rng.below(slice.len);
            let orig = clm.core.params.param("layers.0.ffn.w1").unwrap()[idx];
            clm.core.params.param_mut("layers.0.ffn.w1").unwrap()[idx] = orig + step;
            let lp = loss(&clm);
            clm.core.params.param_mut("layers.0.ffn.w1").unwrap()[idx] = orig - step;
            let lm = loss(&clm);
            clm.core.params.param_mut("layers.0.ffn.w1").unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let denom = grad[idx].abs().max(fd.abs());
            if denom > 1e-7 {
                assert!(
                    ((grad[idx] - fd) / denom).abs() < 1e-4,
                    "idx {idx}: {} vs {fd}",
                    grad[idx]
                );
            }
        }
    }
}
