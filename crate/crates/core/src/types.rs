//! Domain types shared across the probing engine.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! invariants, so a value that exists is a value that is well formed.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for row sums of attention matrices and for
/// distributions that must sum to one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// The literal slot marker inside prompt templates.
pub const SLOT: &str = "{attr}";

/// A tokenized piece of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Text {
    raw: String,
    tokens: Vec<String>,
}

impl Text {
    /// Builds a text from an already-computed tokenization. Use
    /// [`crate::model::tokenize`] to tokenize raw input.
    pub(crate) fn from_parts(raw: String, tokens: Vec<String>) -> Self {
        debug_assert!(!tokens.is_empty());
        Text { raw, tokens }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTerm {
    pub term: String,
    pub group: String,
}

/// A social attribute (gender, profession, ...) and its lexicon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCategory")]
pub struct AttributeCategory {
    name: String,
    terms: Vec<AttributeTerm>,
}

#[derive(Deserialize)]
struct RawCategory {
    name: String,
    terms: Vec<AttributeTerm>,
}

impl TryFrom<RawCategory> for AttributeCategory {
    type Error = Error;

    fn try_from(raw: RawCategory) -> Result<Self> {
        AttributeCategory::new(raw.name, raw.terms)
    }
}

impl AttributeCategory {
    pub fn new(name: impl Into<String>, terms: Vec<AttributeTerm>) -> Result<Self> {
        let name = name.into();
        if terms.is_empty() {
            return Err(Error::InvalidInput(format!("category {name:?} has no terms")));
        }
        let mut seen = HashSet::new();
        for t in &terms {
            if t.term.trim().is_empty() {
                return Err(Error::InvalidInput(format!("category {name:?} has a blank term")));
            }
            if !seen.insert(t.term.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate term {:?} in category {name:?}",
                    t.term
                )));
            }
        }
        Ok(AttributeCategory { name, terms })
    }

    /// Convenience constructor; every term gets its own string as group label.
    pub fn from_terms(name: impl Into<String>, terms: &[&str]) -> Result<Self> {
        Self::new(
            name,
            terms
                .iter()
                .map(|t| AttributeTerm {
                    term: (*t).to_string(),
                    group: (*t).to_string(),
                })
                .collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn terms(&self) -> &[AttributeTerm] {
        &self.terms
    }

    pub fn group_of(&self, term: &str) -> Option<&str> {
        self.terms.iter().find(|t| t.term == term).map(|t| t.group.as_str())
    }
}

/// A sentence pattern with exactly one `{attr}` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct PromptTemplate {
    id: String,
    pattern: String,
}

#[derive(Deserialize)]
struct RawTemplate {
    id: String,
    pattern: String,
}

impl TryFrom<RawTemplate> for PromptTemplate {
    type Error = Error;

    fn try_from(raw: RawTemplate) -> Result<Self> {
        PromptTemplate::new(raw.id, raw.pattern)
    }
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let pattern = pattern.into();
        let slots = pattern.matches(SLOT).count();
        if slots != 1 {
            return Err(Error::InvalidTemplate(format!(
                "template {id:?} has {slots} {SLOT} markers, expected exactly 1"
            )));
        }
        Ok(PromptTemplate { id, pattern })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Byte offset of the slot marker.
    pub fn slot_offset(&self) -> usize {
        self.pattern.find(SLOT).expect("validated on construction")
    }

    /// Substitutes `term` for the slot verbatim.
    pub fn fill(&self, term: &str) -> String {
        self.pattern.replacen(SLOT, term, 1)
    }
}

/// One attribute-swapped instantiation of a template.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMember {
    pub term: String,
    pub text: Text,
    /// Token indices covered by the substituted term.
    pub positions: Vec<usize>,
}

/// A family of texts that differ only in the attribute term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualGroup {
    template_id: String,
    category: String,
    members: Vec<GroupMember>,
}

impl CounterfactualGroup {
    pub fn new(template_id: impl Into<String>, category: impl Into<String>, members: Vec<GroupMember>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InsufficientAttributes(members.len()));
        }
        for m in &members {
            if let Some(&bad) = m.positions.iter().find(|&&p| p >= m.text.token_count()) {
                return Err(Error::Index {
                    index: bad,
                    len: m.text.token_count(),
                });
            }
        }
        Ok(CounterfactualGroup {
            template_id: template_id.into(),
            category: category.into(),
            members,
        })
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn members(&self) -> &[GroupMember] {
        &self.members
    }
}

/// A fixed-dimension, finite embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding has dimension 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Probability of a fixed continuation under a prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationScore {
    pub prompt: Text,
    pub continuation: Text,
    pub token_logprobs: Vec<f64>,
    pub total_prob: f64,
}

impl ContinuationScore {
    pub fn new(prompt: Text, continuation: Text, token_logprobs: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = token_logprobs.iter().find(|&&lp| lp.is_nan() || lp > 0.0) {
            return Err(Error::InvalidInput(format!("log-probability {bad} > 0")));
        }
        let total_prob = token_logprobs.iter().sum::<f64>().exp();
        Ok(ContinuationScore {
            prompt,
            continuation,
            token_logprobs,
            total_prob,
        })
    }
}

/// Per-layer, per-head row-stochastic `n x n` attention matrices.
///
/// Storage is flat, ordered `[layer][head][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    n: usize,
    weights: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(layers: usize, heads: usize, n: usize, weights: Vec<f64>) -> Result<Self> {
        if layers == 0 || heads == 0 || n == 0 {
            return Err(Error::InvalidTensor(format!(
                "degenerate shape ({layers}, {heads}, {n}, {n})"
            )));
        }
        if weights.len() != layers * heads * n * n {
            return Err(Error::InvalidTensor(format!(
                "expected {} weights for shape ({layers}, {heads}, {n}, {n}), got {}",
                layers * heads * n * n,
                weights.len()
            )));
        }
        for (r, row) in weights.chunks_exact(n).enumerate() {
            if let Some(&w) = row.iter().find(|w| !(**w >= 0.0 && **w <= 1.0 + STOCHASTIC_TOL)) {
                return Err(Error::InvalidTensor(format!("entry {w} in row {r} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidTensor(format!("row {r} sums to {sum}")));
            }
        }
        Ok(AttentionTensor {
            layers,
            heads,
            n,
            weights,
        })
    }

    /// Builds from a nested `[layer][head][row][col]` array.
    pub fn from_nested(nested: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        let layers = nested.len();
        let heads = nested.first().map_or(0, Vec::len);
        let n = nested.first().and_then(|l| l.first()).map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(layers * heads * n * n);
        for layer in nested {
            if layer.len() != heads {
                return Err(Error::InvalidTensor("ragged head dimension".into()));
            }
            for head in layer {
                if head.len() != n {
                    return Err(Error::InvalidTensor("ragged row dimension".into()));
                }
                for row in head {
                    if row.len() != n {
                        return Err(Error::InvalidTensor("matrix is not square".into()));
                    }
                    weights.extend(row);
                }
            }
        }
        Self::new(layers, heads, n, weights)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.layers)
            .map(|l| {
                (0..self.heads)
                    .map(|h| self.matrix(l, h).chunks(self.n).map(<[f64]>::to_vec).collect())
                    .collect()
            })
            .collect()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.layers, self.heads, self.n)
    }

    /// The `n x n` matrix for one layer and head, row-major.
    pub fn matrix(&self, layer: usize, head: usize) -> &[f64] {
        let size = self.n * self.n;
        let start = (layer * self.heads + head) * size;
        &self.weights[start..start + size]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.weights
            .chunks_exact(self.n)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// A distribution over a fixed, ordered set of semantic categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl CategoryDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if labels.len() != probs.len() || labels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} labels but {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        let unique: HashSet<_> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::InvalidInput("duplicate category label".into()));
        }
        if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbability(p));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
        }
        Ok(CategoryDistribution { labels, probs })
    }

    /// Empirical distribution of `assigned` labels over `labels`.
    pub fn from_counts(labels: &[String], assigned: &[&str]) -> Result<Self> {
        if assigned.is_empty() {
            return Err(Error::EmptyResults("no assignments to count"));
        }
        let mut counts = vec![0usize; labels.len()];
        for a in assigned {
            let idx = labels
                .iter()
                .position(|l| l == a)
                .ok_or_else(|| Error::CategoryMismatch(format!("unknown label {a:?}")))?;
            counts[idx] += 1;
        }
        let total = assigned.len() as f64;
        Self::new(labels.to_vec(), counts.into_iter().map(|c| c as f64 / total).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }
}

/// Thresholded bias signal: `flagged` iff `score > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVerdict {
    pub score: f64,
    pub threshold: f64,
    pub flagged: bool,
}

impl BiasVerdict {
    pub fn new(score: f64, threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::InvalidThreshold(threshold));
        }
        Ok(BiasVerdict {
            score,
            threshold,
            flagged: score > threshold,
        })
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// One bin of the similarity / conflict alignment curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBin {
    pub lo: f64,
    pub hi: f64,
    pub midpoint: f64,
    pub pair_count: usize,
    pub conflicts: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conflict_rate: Option<f64>,
}

/// Aggregated metric block from an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub detection_accuracy_pct: f64,
    pub semantic_consistency_pct: f64,
    pub contextual_sensitivity_pct: f64,
    pub per_dimension: std::collections::BTreeMap<String, f64>,
    pub alignment_curve: Vec<AlignmentBin>,
    pub instance_count: usize,
    pub skipped_instances: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_requires_exactly_one_slot() {
        assert!(PromptTemplate::new("a", "The {attr} ran.").is_ok());
        assert!(matches!(
            PromptTemplate::new("b", "No slot here."),
            Err(Error::InvalidTemplate(_))
        ));
        assert!(matches!(
            PromptTemplate::new("c", "{attr} and {attr}"),
            Err(Error::InvalidTemplate(_))
        ));
    }

    #[test]
    fn verdict_is_strict() {
        assert!(!BiasVerdict::new(1.0, 1.0).unwrap().flagged);
        assert!(BiasVerdict::new(1.0 + 1e-12, 1.0).unwrap().flagged);
        assert!(matches!(BiasVerdict::new(0.5, 0.0), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn attention_rows_must_sum_to_one() {
        assert!(AttentionTensor::new(1, 1, 2, vec![0.6, 0.4, 0.3, 0.7]).is_ok());
        assert!(matches!(
            AttentionTensor::new(1, 1, 2, vec![0.25, 0.25, 0.3, 0.7]),
            Err(Error::InvalidTensor(_))
        ));
        assert!(matches!(
            AttentionTensor::new(1, 1, 2, vec![1.5, -0.5, 0.3, 0.7]),
            Err(Error::InvalidTensor(_))
        ));
    }

    #[test]
    fn nested_round_trip() {
        let t = AttentionTensor::new(2, 1, 2, vec![1.0, 0.0, 0.5, 0.5, 0.2, 0.8, 0.9, 0.1]).unwrap();
        assert_eq!(AttentionTensor::from_nested(t.to_nested()).unwrap(), t);
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn category_terms_unique() {
        assert!(AttributeCategory::from_terms("g", &["man", "man"]).is_err());
        assert!(AttributeCategory::from_terms("g", &[]).is_err());
    }

    #[test]
    fn distribution_from_counts() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let d = CategoryDistribution::from_counts(&labels, &["a", "a", "b", "a"]).unwrap();
        assert_eq!(d.probs(), &[0.75, 0.25]);
        assert!(CategoryDistribution::from_counts(&labels, &["c"]).is_err());
    }

    #[test]
    fn continuation_total_prob() {
        let t = Text::from_parts("x".into(), vec!["x".into()]);
        let s = ContinuationScore::new(t.clone(), t, vec![-0.5, -1.0]).unwrap();
        assert!((s.total_prob - (-1.5f64).exp()).abs() <= 1e-15);
    }
}
