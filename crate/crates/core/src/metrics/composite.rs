use serde::{Deserialize, Serialize};

use super::{
    attention_sensitivity, embedding_distance, generation_probability_gap, PerturbationMode, PerturbationSpec,
};
use crate::error::{Error, Result};
use crate::model::Backend;
use crate::types::{CounterfactualGroup, Text};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Convex weights of the embedding, probability and attention signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub embed: f64,
    pub prob: f64,
    pub attn: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights {
            embed: 0.4,
            prob: 0.4,
            attn: 0.2,
        }
    }
}

impl CompositeWeights {
    pub fn new(embed: f64, prob: f64, attn: f64) -> Result<Self> {
        let w = CompositeWeights { embed, prob, attn };
        w.validate()?;
        Ok(w)
    }

    pub fn embedding_only() -> Self {
        CompositeWeights {
            embed: 1.0,
            prob: 0.0,
            attn: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.embed, self.prob, self.attn];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(format!("weights must be >= 0, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidConfig(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Maps `[0, inf)` onto `[0, 1)`.
pub fn normalize_distance(x: f64) -> f64 {
    x / (1.0 + x)
}

/// The three normalized signals and their weighted sum. Signals with zero
/// weight are not computed and reported as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositeSignals {
    pub embedding: Option<f64>,
    pub probability: Option<f64>,
    pub attention: Option<f64>,
    pub score: f64,
}

pub fn composite_signals(
    group: &CounterfactualGroup,
    backend: &dyn Backend,
    continuation: &Text,
    weights: &CompositeWeights,
    mode: PerturbationMode,
) -> Result<CompositeSignals> {
    weights.validate()?;
    mode.validate()?;
    let caps = backend.capabilities();
    if weights.prob > 0.0 && !caps.has_logprobs {
        return Err(Error::Unsupported("continuation log-probabilities"));
    }
    if weights.attn > 0.0 && !caps.has_override {
        return Err(Error::Unsupported("attention override"));
    }
    let members = group.members();

    let embedding = if weights.embed > 0.0 {
        let vecs = members
            .iter()
            .map(|m| backend.embed(&m.text))
            .collect::<Result<Vec<_>>>()?;
        let mut max = 0.0f64;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                max = max.max(embedding_distance(&vecs[i], &vecs[j])?);
            }
        }
        Some(normalize_distance(max))
    } else {
        None
    };

    let probability = if weights.prob > 0.0 {
        let probs = members
            .iter()
            .map(|m| {
                backend
                    .continuation_probability(&m.text, continuation)
                    .map(|s| s.total_prob)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(generation_probability_gap(&probs)?)
    } else {
        None
    };

    let attention = if weights.attn > 0.0 {
        let total = members
            .iter()
            .map(|m| attention_sensitivity(backend, &m.text, &PerturbationSpec::new(mode, m.positions.clone())))
            .sum::<Result<f64>>()?;
        Some(normalize_distance(total / members.len() as f64))
    } else {
        None
    };

    let score = weights.embed * embedding.unwrap_or(0.0)
        + weights.prob * probability.unwrap_or(0.0)
        + weights.attn * attention.unwrap_or(0.0);
    Ok(CompositeSignals {
        embedding,
        probability,
        attention,
        score: score.clamp(0.0, 1.0),
    })
}

/// Weighted detector score in `[0, 1]` for one counterfactual group.
pub fn composite_bias_score(
    group: &CounterfactualGroup,
    backend: &dyn Backend,
    continuation: &Text,
    weights: &CompositeWeights,
    mode: PerturbationMode,
) -> Result<f64> {
    composite_signals(group, backend, continuation, weights, mode).map(|s| s.score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tokenize, ReferenceModel, ReferenceModelConfig};
    use crate::types::GroupMember;

    #[test]
    fn weights_validated() {
        assert!(CompositeWeights::new(0.4, 0.4, 0.2).is_ok());
        assert!(CompositeWeights::new(0.5, 0.5, 0.5).is_err());
        assert!(CompositeWeights::new(1.5, -0.5, 0.0).is_err());
    }

    #[test]
    fn identical_members_score_zero() {
        let m = ReferenceModel::build(ReferenceModelConfig::with_seed(42)).unwrap();
        let text = tokenize("someone fixed the engine .").unwrap();
        let member = GroupMember {
            term: "someone".into(),
            text,
            positions: vec![],
        };
        let group = CounterfactualGroup::new("t", "c", vec![member.clone(), member]).unwrap();
        let cont = tokenize("today").unwrap();
        let s = composite_signals(&group, &m, &cont, &CompositeWeights::default(), PerturbationMode::Zero).unwrap();
        assert_eq!(s.embedding, Some(0.0));
        assert_eq!(s.probability, Some(0.0));
        assert_eq!(s.attention, Some(0.0));
        assert_eq!(s.score, 0.0);
    }
}
