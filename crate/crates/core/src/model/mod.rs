//! Model backends.
//!
//! A [`Backend`] exposes the three quantities the bias measures read from a
//! language model: a text embedding, continuation log-probabilities, and the
//! attention tensor of the forward pass. Two implementations ship:
//!
//! - [`ReferenceModel`], a seeded mini-transformer that supports everything,
//!   including re-running the forward pass with a substituted attention
//!   tensor.
//! - [`BundleBackend`], a read-only lookup over a tensor-bundle file exported
//!   from a real model.

mod bundle;
mod finetune;
mod reference;
mod rng;
mod tokenizer;

pub use bundle::{write_bundle, BundleBackend, BundleHeader, BundleItem, BUNDLE_VERSION};
pub use finetune::{finetune_projection, FinetuneOutcome, ProjectionHead};
pub use reference::{LayerWeights, ReferenceModel, ReferenceModelConfig, ReferenceWeights};
pub use rng::SplitMix64;
pub use tokenizer::{fnv1a64, token_id, token_ids, tokenize, tokenize_with_spans, TOKENIZER_NAME};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{AttentionTensor, ContinuationScore, EmbeddingVector, Text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BackendCapabilities {
    pub has_attention: bool,
    pub has_override: bool,
    pub has_logprobs: bool,
}

/// The model contract consumed by the metrics.
///
/// Implementations must be deterministic and safe for concurrent reads.
pub trait Backend: Send + Sync {
    fn capabilities(&self) -> BackendCapabilities;

    /// Embedding dimension.
    fn dim(&self) -> usize;

    fn embed(&self, text: &Text) -> Result<EmbeddingVector>;

    fn continuation_probability(&self, _prompt: &Text, _continuation: &Text) -> Result<ContinuationScore> {
        Err(Error::Unsupported("continuation log-probabilities"))
    }

    fn attentions(&self, _text: &Text) -> Result<AttentionTensor> {
        Err(Error::Unsupported("attention extraction"))
    }

    /// Re-runs the forward pass with every attention matrix replaced by
    /// `override_` before value aggregation.
    fn embed_with_attention_override(&self, _text: &Text, _override_: &AttentionTensor) -> Result<EmbeddingVector> {
        Err(Error::Unsupported("attention override"))
    }
}
