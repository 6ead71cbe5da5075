use serde::Serialize;

use super::squared_distance;
use crate::error::{Error, Result};
use crate::model::SplitMix64;
use crate::types::{CategoryDistribution, EmbeddingVector};

/// Nearest-prototype semantic category classifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryModel {
    labels: Vec<String>,
    prototypes: Vec<EmbeddingVector>,
}

impl CategoryModel {
    pub fn new(labels: Vec<String>, prototypes: Vec<EmbeddingVector>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 categories, got {}",
                labels.len()
            )));
        }
        if labels.len() != prototypes.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels but {} prototypes",
                labels.len(),
                prototypes.len()
            )));
        }
        let d = prototypes[0].dim();
        if prototypes.iter().any(|p| p.dim() != d) {
            return Err(Error::ShapeMismatch("prototypes differ in dimension".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidInput(format!("duplicate category label {l:?}")));
            }
        }
        Ok(CategoryModel { labels, prototypes })
    }

    /// Prototypes drawn uniformly from `[-1, 1)^dim`, one per label in order.
    pub fn seeded(labels: &[&str], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let prototypes = labels
            .iter()
            .map(|_| EmbeddingVector::new(rng.fill_uniform(dim, -1.0, 1.0)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels.iter().map(|l| l.to_string()).collect(), prototypes)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prototypes(&self) -> &[EmbeddingVector] {
        &self.prototypes
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    /// Empirical category distribution of a set of embeddings.
    pub fn distribution(&self, vectors: &[EmbeddingVector]) -> Result<CategoryDistribution> {
        let assigned = vectors
            .iter()
            .map(|v| classify_category(v, self))
            .collect::<Result<Vec<_>>>()?;
        CategoryDistribution::from_counts(&self.labels, &assigned)
    }
}

/// Label of the nearest prototype; ties go to the earlier category.
pub fn classify_category<'a>(v: &EmbeddingVector, cm: &'a CategoryModel) -> Result<&'a str> {
    if v.dim() != cm.dim() {
        return Err(Error::ShapeMismatch(format!(
            "vector of dimension {} against prototypes of dimension {}",
            v.dim(),
            cm.dim()
        )));
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in cm.prototypes.iter().enumerate() {
        let d = squared_distance(v.values(), p.values());
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(&cm.labels[best])
}

/// Total variation distance between two distributions over the same
/// category set.
pub fn category_shift(p: &CategoryDistribution, q: &CategoryDistribution) -> Result<f64> {
    if p.labels().len() != q.labels().len() {
        return Err(Error::CategoryMismatch(format!(
            "{} vs {} categories",
            p.labels().len(),
            q.labels().len()
        )));
    }
    let mut total = 0.0;
    for (label, pp) in p.labels().iter().zip(p.probs()) {
        let qp = q
            .prob(label)
            .ok_or_else(|| Error::CategoryMismatch(format!("{label:?} missing from one side")))?;
        total += (pp - qp).abs();
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}
