//! Pretraining loops (masked-token objective for the encoder, next-token
//! for the decoder) and the Adam optimizer over named parameter groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CellDataset, NeutralDataset};
use crate::rng::Rng;

use super::params::{ModelGrads, ModelParams};
use super::{Arch, ModelCore, ModelError, ModelKind, TinyClm, TinyMlm, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Pretraining fails with `NotConverged` if the minimum per-cell article
    /// accuracy on validation stays below this after `max_epochs`. Zero
    /// disables the gate.
    pub target_accuracy: f64,
    /// Fraction of non-slot tokens additionally masked per instance.
    pub mask_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 60,
            target_accuracy: 0.95,
            mask_rate: 0.15,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub min_cell_accuracy: f64,
    pub final_loss: f64,
}

/// Adam over all parameter groups; weight decay (classic L2-into-gradient)
/// applies to matrix-shaped groups only.
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    is_matrix: Vec<bool>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Adam {
        let entries = params.entries();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: entries.iter().map(|(_, d, _)| vec![0.0; d.len()]).collect(),
            v: entries.iter().map(|(_, d, _)| vec![0.0; d.len()]).collect(),
            is_matrix: entries.iter().map(|(_, _, (r, _))| *r > 1).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gentries = grads.entries();
        for (gi, (name, dst)) in params.entries_mut().into_iter().enumerate() {
            let (gname, gdata, _) = &gentries[gi];
            debug_assert_eq!(&name, gname);
            let m = &mut self.m[gi];
            let v = &mut self.v[gi];
            let decay = if self.is_matrix[gi] {
                self.weight_decay
            } else {
                0.0
            };
            for i in 0..dst.len() {
                let g = gdata[i] + decay * dst[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                dst[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One pretraining item: the original (unmasked) token ids plus the article
/// slot positions that are always masked. Neutral sentences have no slots.
struct Item {
    ids: Vec<u32>,
    slots: Vec<usize>,
}

fn collect_vocab(cells: &[CellDataset], neutral: &NeutralDataset) -> Vocabulary {
    let mut tokens: Vec<String> = Vec::new();
    for ds in cells {
        for inst in ds.all() {
            tokens.extend(inst.original_tokens());
        }
    }
    for s in &neutral.sentences {
        tokens.extend(s.iter().cloned());
    }
    Vocabulary::build(tokens.iter().map(String::as_str))
}

fn collect_items(
    core_vocab: &Vocabulary,
    cells: &[CellDataset],
    neutral: &NeutralDataset,
    max_len: usize,
) -> Result<Vec<Item>, ModelError> {
    let mut items = Vec::new();
    for ds in cells {
        for inst in &ds.train {
            let ids = core_vocab.encode(&inst.original_tokens());
            if ids.len() > max_len {
                return Err(ModelError::TooLong {
                    got: ids.len(),
                    max: max_len,
                });
            }
            items.push(Item {
                ids,
                slots: inst.mask_positions.clone(),
            });
        }
    }
    for s in &neutral.sentences {
        let ids = core_vocab.encode(s);
        if ids.len() > max_len {
            return Err(ModelError::TooLong {
                got: ids.len(),
                max: max_len,
            });
        }
        items.push(Item {
            ids,
            slots: Vec::new(),
        });
    }
    Ok(items)
}

/// Masked positions for one item in one epoch: the article slots plus a
/// random `mask_rate` fraction of the other tokens.
fn masked_positions(item: &Item, rng: &mut Rng, mask_rate: f64) -> Vec<usize> {
    let mut positions = item.slots.clone();
    for p in 0..item.ids.len() {
        if !item.slots.contains(&p) && rng.next_f64() < mask_rate {
            positions.push(p);
        }
    }
    if positions.is_empty() {
        positions.push(rng.below(item.ids.len()));
    }
    positions.sort_unstable();
    positions
}

fn batch_grad(
    core: &ModelCore,
    items: &[&Item],
    masks: &[Vec<usize>],
) -> (f64, ModelGrads) {
    let results: Vec<(f64, ModelGrads)> = items
        .par_iter()
        .zip(masks.par_iter())
        .map(|(item, positions)| {
            let mut ids = item.ids.clone();
            let targets: Vec<u32> = positions.iter().map(|&p| item.ids[p]).collect();
            for &p in positions {
                ids[p] = core.vocab.mask();
            }
            core.loss_and_grad(&ids, positions, &targets)
        })
        .collect();
    let inv = 1.0 / results.len() as f64;
    let mut loss = 0.0;
    let mut total = core.params.zeros_like();
    for (l, g) in &results {
        loss += l * inv;
        total.axpy(inv, g);
    }
    (loss, total)
}

/// Minimum per-cell article accuracy on the validation splits.
pub fn min_cell_val_accuracy(mlm: &TinyMlm, cells: &[CellDataset]) -> f64 {
    cells
        .iter()
        .map(|ds| {
            let hits: usize = ds
                .val
                .par_iter()
                .map(|inst| {
                    let ok = inst.single_mask()
                        && mlm
                            .article_argmax(inst)
                            .map(|a| a == inst.factual_article)
                            .unwrap_or(false);
                    usize::from(ok)
                })
                .sum();
            hits as f64 / ds.val.len().max(1) as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// Trains the encoder MLM on the union of all cell train splits plus the
/// neutral dataset. The objective masks every article slot plus a random
/// 15% of other tokens and predicts the original tokens.
pub fn pretrain_mlm(
    arch: Arch,
    cells: &[CellDataset],
    neutral: &NeutralDataset,
    cfg: PretrainConfig,
) -> Result<(TinyMlm, PretrainReport), ModelError> {
    if cells.iter().all(|c| c.train.is_empty()) && neutral.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = collect_vocab(cells, neutral);
    let items = collect_items(&vocab, cells, neutral, arch.max_len)?;
    let mut rng = Rng::from_seed(cfg.seed).fork("pretrain-mlm");
    let params = ModelParams::init(arch, vocab.len(), &mut rng);
    let core = ModelCore {
        arch,
        vocab,
        params,
        kind: ModelKind::Encoder,
    };
    let mut mlm = TinyMlm { core };
    let mut adam = Adam::new(&mlm.core.params, cfg.learning_rate, cfg.weight_decay);

    let mut report = PretrainReport {
        epochs_run: 0,
        min_cell_accuracy: 0.0,
        final_loss: f64::NAN,
    };
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut epoch_rng = rng.fork(&format!("epoch/{epoch}"));
        epoch_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Item> = chunk.iter().map(|&i| &items[i]).collect();
            let masks: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| {
                    let mut r = epoch_rng.fork(&format!("mask/{i}"));
                    masked_positions(&items[i], &mut r, cfg.mask_rate)
                })
                .collect();
            let (loss, grads) = batch_grad(&mlm.core, &batch, &masks);
            adam.step(&mut mlm.core.params, &grads);
            epoch_loss += loss;
            n_batches += 1;
        }
        report.epochs_run = epoch + 1;
        report.final_loss = epoch_loss / n_batches.max(1) as f64;
        report.min_cell_accuracy = min_cell_val_accuracy(&mlm, cells);
        if cfg.target_accuracy > 0.0 && report.min_cell_accuracy >= cfg.target_accuracy {
            return Ok((mlm, report));
        }
    }
    if cfg.target_accuracy > 0.0 && report.min_cell_accuracy < cfg.target_accuracy {
        return Err(ModelError::NotConverged {
            accuracy: report.min_cell_accuracy,
            target: cfg.target_accuracy,
        });
    }
    Ok((mlm, report))
}

/// Trains the decoder variant with the plain next-token objective on the
/// same corpus (original, unmasked sentences). No convergence gate; the
/// article head supplies the article-prediction interface.
pub fn pretrain_clm(
    arch: Arch,
    cells: &[CellDataset],
    neutral: &NeutralDataset,
    cfg: PretrainConfig,
) -> Result<(TinyClm, PretrainReport), ModelError> {
    if cells.iter().all(|c| c.train.is_empty()) && neutral.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = collect_vocab(cells, neutral);
    let items = collect_items(&vocab, cells, neutral, arch.max_len)?;
    let mut rng = Rng::from_seed(cfg.seed).fork("pretrain-clm");
    let params = ModelParams::init(arch, vocab.len(), &mut rng);
    let core = ModelCore {
        arch,
        vocab,
        params,
        kind: ModelKind::Decoder,
    };
    let mut clm = TinyClm { core, head: None };
    let mut adam = Adam::new(&clm.core.params, cfg.learning_rate, cfg.weight_decay);

    let mut report = PretrainReport {
        epochs_run: 0,
        min_cell_accuracy: f64::NAN,
        final_loss: f64::NAN,
    };
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut epoch_rng = rng.fork(&format!("epoch/{epoch}"));
        epoch_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let results: Vec<(f64, ModelGrads)> = chunk
                .par_iter()
                .filter(|&&i| items[i].ids.len() >= 2)
                .map(|&i| {
                    let ids = &items[i].ids;
                    let positions: Vec<usize> = (0..ids.len() - 1).collect();
                    let targets: Vec<u32> = ids[1..].to_vec();
                    clm.core.loss_and_grad(ids, &positions, &targets)
                })
                .collect();
            if results.is_empty() {
                continue;
            }
            let inv = 1.0 / results.len() as f64;
            let mut total = clm.core.params.zeros_like();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l * inv;
                total.axpy(inv, g);
            }
            adam.step(&mut clm.core.params, &total);
            epoch_loss += loss;
            n_batches += 1;
        }
        report.epochs_run = epoch + 1;
        report.final_loss = epoch_loss / n_batches.max(1) as f64;
    }
    Ok((clm, report))
}
