//! A tiny transformer language model with exact reverse-mode gradients.
//!
//! The encoder variant ([`TinyMlm`]) is a bidirectional masked language
//! model; the decoder variant ([`TinyClm`]) uses causal attention plus a
//! six-class article head fed by mean-pooled hidden states after the mask
//! position. All arithmetic is f64 and every computation is deterministic,
//! so analytic gradients can be checked against central finite differences
//! and repeated runs are bit-identical.

mod head;
mod io;
mod model;
mod params;
mod score;
mod slice;
mod train;
mod vocab;

pub use head::{train_article_head, ArticleHead};
pub use io::{read_checkpoint, write_checkpoint, LoadedModel};
pub use model::{Forward, ModelGrads};
pub use params::{LayerParams, Mat, ModelParams};
pub use score::{
    grad_unmasked_lm, grad_wrt_slice, LmsMetric, LmsPolicy, LmsScore,
};
pub use slice::ParamSlice;
pub use train::{pretrain_clm, pretrain_mlm, PretrainConfig, PretrainReport};
pub use vocab::Vocabulary;

use serde::{Deserialize, Serialize};

use crate::corpus::MaskedInstance;
use crate::paradigm::Article;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("pretraining did not converge: min cell accuracy {accuracy:.4} < {target:.4}")]
    NotConverged { accuracy: f64, target: f64 },
    #[error("instance has {found} mask positions, expected exactly one")]
    MultiMask { found: usize },
    #[error("batch mixes cells {0} and {1}")]
    MixedCells(String, String),
    #[error("parameter slice {name:?} does not match model (expected length {expected}, got {got})")]
    SliceMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown parameter group {0:?}")]
    UnknownParam(String),
    #[error("sequence length {got} exceeds model maximum {max}")]
    TooLong { got: usize, max: usize },
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("pooling length must be at least 1")]
    BadPoolingLength,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Attention pattern of the transformer core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Encoder,
    Decoder,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Arch {
    /// Desk-scale default: seconds-scale gradient extraction while keeping
    /// a real multi-head transformer.
    pub const DESK: Arch = Arch {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        d_ff: 64,
        max_len: 16,
    };

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) {
        assert!(self.d_model % self.n_heads == 0, "d_model % n_heads != 0");
        assert!(self.n_layers > 0 && self.max_len > 0);
    }
}

/// The transformer core shared by both model kinds.
#[derive(Debug, Clone)]
pub struct ModelCore {
    pub arch: Arch,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub kind: ModelKind,
}

/// Encoder-only masked language model.
#[derive(Debug, Clone)]
pub struct TinyMlm {
    pub core: ModelCore,
}

/// Decoder-only model with an optional article classification head.
#[derive(Debug, Clone)]
pub struct TinyClm {
    pub core: ModelCore,
    pub head: Option<ArticleHead>,
}

impl TinyMlm {
    pub fn kind(&self) -> ModelKind {
        ModelKind::Encoder
    }

    /// FNV-1a over all parameter bytes; used for cache staleness checks and
    /// the "base model untouched" invariants.
    pub fn param_checksum(&self) -> u64 {
        self.core.params.checksum()
    }
}

impl TinyClm {
    pub fn kind(&self) -> ModelKind {
        ModelKind::Decoder
    }

    pub fn param_checksum(&self) -> u64 {
        self.core.params.checksum()
    }
}

/// Token ids of an instance's sentence (with masks), checked against the
/// model window.
pub(crate) fn instance_ids(core: &ModelCore, inst: &MaskedInstance) -> Result<Vec<u32>, ModelError> {
    let ids = core.vocab.encode(&inst.tokens);
    if ids.len() > core.arch.max_len {
        return Err(ModelError::TooLong {
            got: ids.len(),
            max: core.arch.max_len,
        });
    }
    Ok(ids)
}

/// Target token id for pushing an article at a mask position: the casing of
/// the original surface is preserved when the vocabulary has that variant
/// (e.g. "Der" at sentence-initial slots), otherwise lowercase.
pub(crate) fn article_target_id(
    vocab: &Vocabulary,
    original_surface: &str,
    article: Article,
) -> u32 {
    let capitalized = original_surface
        .chars()
        .next()
        .is_some_and(char::is_uppercase);
    if capitalized {
        if let Some(id) = vocab.id_of(article.capitalized()) {
            return id;
        }
    }
    vocab
        .id_of(article.as_str())
        .expect("all lowercase articles are in the vocabulary")
}
