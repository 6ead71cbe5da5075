use crate::error::{Error, Result};
use crate::model::ProjectionHead;
use crate::types::{EmbeddingVector, Matrix};

type Pair = (EmbeddingVector, EmbeddingVector);

fn validate(pairs: &[Pair], margin: f64) -> Result<usize> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::InvalidMargin(margin));
    }
    let d = pairs
        .first()
        .map(|(a, _)| a.dim())
        .ok_or(Error::EmptyResults("no pairs"))?;
    for (i, (a, b)) in pairs.iter().enumerate() {
        if a.dim() != d || b.dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "pair {i} has dimensions ({}, {}), expected {d}",
                a.dim(),
                b.dim()
            )));
        }
    }
    Ok(d)
}

fn difference(a: &EmbeddingVector, b: &EmbeddingVector) -> Vec<f64> {
    a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect()
}

fn hinge(sq: f64, margin: f64) -> f64 {
    (sq - margin).max(0.0)
}

/// Sum over pairs of `max(0, |v_i - v_j|^2 - margin)`.
pub fn contrastive_bias_loss(pairs: &[Pair], margin: f64) -> Result<f64> {
    validate(pairs, margin)?;
    Ok(pairs
        .iter()
        .map(|(a, b)| hinge(difference(a, b).iter().map(|x| x * x).sum(), margin))
        .sum())
}

/// The hinge loss evaluated on projected vectors `W v`.
pub fn projected_bias_loss(pairs: &[Pair], margin: f64, head: &ProjectionHead) -> Result<f64> {
    let d = validate(pairs, margin)?;
    check_head(d, head)?;
    Ok(pairs
        .iter()
        .map(|(a, b)| {
            let p = head.apply(&difference(a, b));
            hinge(p.iter().map(|x| x * x).sum(), margin)
        })
        .sum())
}

fn check_head(d: usize, head: &ProjectionHead) -> Result<()> {
    if head.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "projection is {0}x{0} but embeddings have dimension {d}",
            head.dim()
        )));
    }
    Ok(())
}

/// Gradient of [`projected_bias_loss`] with respect to `W`:
/// `sum over active pairs of 2 (W u_i - W u_j)(u_i - u_j)^T`.
///
/// A pair exactly at the margin is inactive.
pub fn contrastive_bias_loss_gradient(pairs: &[Pair], margin: f64, head: &ProjectionHead) -> Result<Matrix> {
    let d = validate(pairs, margin)?;
    check_head(d, head)?;
    let mut grad = Matrix::zeros(d, d);
    for (a, b) in pairs {
        let delta = difference(a, b);
        let p = head.apply(&delta);
        if p.iter().map(|x| x * x).sum::<f64>() <= margin {
            continue;
        }
        for (r, row) in grad.data_mut().chunks_exact_mut(d).enumerate() {
            for (g, dc) in row.iter_mut().zip(&delta) {
                *g += 2.0 * p[r] * dc;
            }
        }
    }
    Ok(grad)
}
