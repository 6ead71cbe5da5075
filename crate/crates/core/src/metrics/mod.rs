//! Bias measures over backend outputs.
//!
//! Everything here is a pure function of its inputs (and of an immutable
//! backend where one is taken), so callers may evaluate instances in
//! parallel freely.

mod attention;
mod category;
mod composite;
mod contrastive;

pub use attention::{attention_sensitivity, perturb_attention, PerturbationMode, PerturbationSpec};
pub use category::{category_shift, classify_category, CategoryModel};
pub use composite::{composite_bias_score, composite_signals, normalize_distance, CompositeSignals, CompositeWeights};
pub use contrastive::{contrastive_bias_loss, contrastive_bias_loss_gradient, projected_bias_loss};

use crate::error::{Error, Result};
use crate::types::{BiasVerdict, EmbeddingVector};

/// Default embedding-distance threshold.
pub const DEFAULT_DELTA: f64 = 0.1;
/// Default hinge margin.
pub const DEFAULT_MARGIN: f64 = 1.0;

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distance between two embeddings.
pub fn embedding_distance(v1: &EmbeddingVector, v2: &EmbeddingVector) -> Result<f64> {
    check_dims(v1.values(), v2.values())?;
    Ok(squared_distance(v1.values(), v2.values()).sqrt())
}

/// Flags a pair whose embedding distance strictly exceeds `delta`.
pub fn embedding_bias_flag(v1: &EmbeddingVector, v2: &EmbeddingVector, delta: f64) -> Result<BiasVerdict> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidThreshold(delta));
    }
    BiasVerdict::new(embedding_distance(v1, v2)?, delta)
}

/// Largest absolute difference in continuation probability across
/// attribute-swapped prompts. Equal to `max - min`.
pub fn generation_probability_gap(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InsufficientAttributes(probs.len()));
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidProbability(p));
    }
    let (lo, hi) = probs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
        (lo.min(p), hi.max(p))
    });
    Ok(hi - lo)
}

/// Cosine similarity clamped to `[-1, 1]`; zero vectors have similarity 0.
pub fn cosine_similarity(v1: &EmbeddingVector, v2: &EmbeddingVector) -> Result<f64> {
    let (a, b) = (v1.values(), v2.values());
    check_dims(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
