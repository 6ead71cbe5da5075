//! Contrastive fine-tuning of a linear projection head over frozen
//! embeddings, minimizing the hinge bias loss by full-batch gradient descent.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{contrastive_bias_loss_gradient, projected_bias_loss};
use crate::types::{EmbeddingVector, Matrix};

/// Linear map `v -> W v` applied to frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    w: Matrix,
}

impl ProjectionHead {
    pub fn identity(d: usize) -> Self {
        ProjectionHead { w: Matrix::identity(d) }
    }

    pub fn from_matrix(w: Matrix) -> Result<Self> {
        if w.rows() != w.cols() || w.rows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "projection must be square, got {}x{}",
                w.rows(),
                w.cols()
            )));
        }
        if w.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("projection has non-finite entries".into()));
        }
        Ok(ProjectionHead { w })
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.w.mul_vec(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneOutcome {
    #[serde(skip)]
    pub head: ProjectionHead,
    /// Loss before the first update, then after every update: `steps + 1`
    /// values.
    pub trajectory: Vec<f64>,
}

pub fn finetune_projection(
    pairs: &[(EmbeddingVector, EmbeddingVector)],
    margin: f64,
    learning_rate: f64,
    steps: usize,
) -> Result<FinetuneOutcome> {
    let d = pairs
        .first()
        .map(|(a, _)| a.dim())
        .ok_or(Error::EmptyResults("no pairs to fine-tune on"))?;
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be > 0, got {learning_rate}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be positive".into()));
    }

    let mut head = ProjectionHead::identity(d);
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(projected_bias_loss(pairs, margin, &head)?);
    for _ in 0..steps {
        let grad = contrastive_bias_loss_gradient(pairs, margin, &head)?;
        for (w, g) in head.w.data_mut().iter_mut().zip(grad.data()) {
            *w -= learning_rate * g;
        }
        trajectory.push(projected_bias_loss(pairs, margin, &head)?);
    }
    Ok(FinetuneOutcome { head, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn satisfied_pairs_leave_identity() {
        let pairs = vec![(v(&[0.0, 0.0]), v(&[0.5, 0.5]))];
        let out = finetune_projection(&pairs, 1.0, 0.1, 10).unwrap();
        assert_eq!(out.trajectory[0], 0.0);
        assert_eq!(out.head, ProjectionHead::identity(2));
    }

    #[test]
    fn one_violating_pair_decreases() {
        let pairs = vec![(v(&[1.0, 0.0, 0.5]), v(&[-1.0, 0.5, 0.0]))];
        let out = finetune_projection(&pairs, 1.0, 1e-3, 200).unwrap();
        assert_eq!(out.trajectory.len(), 201);
        assert!(out.trajectory.last().unwrap() < &out.trajectory[0]);
        assert!(out.trajectory.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dimension_mismatch() {
        let pairs = vec![(v(&[1.0, 0.0]), v(&[1.0, 0.0, 0.0]))];
        assert!(matches!(
            finetune_projection(&pairs, 1.0, 1e-3, 5),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
