use crate::counterfactual::{swap_first_attribute, LexiconPack};
use crate::error::{Error, Result};
use crate::metrics::{cosine_similarity, embedding_bias_flag};
use crate::model::Backend;
use crate::types::{AlignmentBin, Text};

/// Similarity of one text pair and the bias verdict of each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairJudgement {
    pub similarity: f64,
    pub flagged_a: bool,
    pub flagged_b: bool,
}

impl PairJudgement {
    pub fn conflict(&self) -> bool {
        self.flagged_a != self.flagged_b
    }
}

/// Width used when every pair has the same similarity.
const DEGENERATE_SPAN: f64 = 1e-6;

/// Bins judgements into `bins` equal-width similarity bins spanning the
/// observed range. A similarity on an inner boundary goes to the higher bin;
/// the maximum goes to the last bin.
pub fn bin_alignment(judgements: &[PairJudgement], bins: usize) -> Result<Vec<AlignmentBin>> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bins must be at least 2, got {bins}")));
    }
    if judgements.is_empty() {
        return Err(Error::EmptyResults("no pairs for the alignment curve"));
    }
    let mut lo = judgements.iter().map(|j| j.similarity).fold(f64::INFINITY, f64::min);
    let hi = judgements
        .iter()
        .map(|j| j.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        lo = hi - DEGENERATE_SPAN;
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|k| {
            if k == bins {
                hi
            } else {
                lo + (hi - lo) * k as f64 / bins as f64
            }
        })
        .collect();

    let mut counts = vec![0usize; bins];
    let mut conflicts = vec![0usize; bins];
    for j in judgements {
        let idx = edges[1..bins].iter().filter(|&&e| j.similarity >= e).count();
        counts[idx] += 1;
        conflicts[idx] += usize::from(j.conflict());
    }

    Ok((0..bins)
        .map(|k| AlignmentBin {
            lo: edges[k],
            hi: edges[k + 1],
            midpoint: 0.5 * (edges[k] + edges[k + 1]),
            pair_count: counts[k],
            conflicts: conflicts[k],
            conflict_rate: (counts[k] > 0).then(|| conflicts[k] as f64 / counts[k] as f64),
        })
        .collect())
}

fn flag_against_counterpart(text: &Text, backend: &dyn Backend, pack: &LexiconPack, delta: f64) -> Result<bool> {
    let Some(counterpart) = swap_first_attribute(text, pack)? else {
        return Ok(false);
    };
    let v = backend.embed(text)?;
    let w = backend.embed(&counterpart)?;
    Ok(embedding_bias_flag(&v, &w, delta)?.flagged)
}

/// Cosine similarity of each pair against whether the two texts receive
/// the same bias verdict. Each text is judged against its own counterpart
/// with the first lexicon term swapped; a text without any lexicon term is
/// never flagged.
pub fn alignment_curve(
    pairs: &[(Text, Text)],
    backend: &dyn Backend,
    delta: f64,
    bins: usize,
    pack: &LexiconPack,
) -> Result<Vec<AlignmentBin>> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bins must be at least 2, got {bins}")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidThreshold(delta));
    }
    let judgements = pairs
        .iter()
        .map(|(a, b)| {
            Ok(PairJudgement {
                similarity: cosine_similarity(&backend.embed(a)?, &backend.embed(b)?)?,
                flagged_a: flag_against_counterpart(a, backend, pack, delta)?,
                flagged_b: flag_against_counterpart(b, backend, pack, delta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    bin_alignment(&judgements, bins)
}
