//! Attention perturbation at attribute-token positions and the resulting
//! embedding displacement.
//!
//! Perturbation acts on attention COLUMNS (attention paid to the attribute
//! tokens) in every layer and head, after which each row is renormalized.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::embedding_distance;
use crate::error::{Error, Result};
use crate::model::Backend;
use crate::types::{AttentionTensor, Text};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PerturbationMode {
    /// Attention to the positions is removed.
    #[default]
    Zero,
    /// Attention to the positions is multiplied by `lambda`.
    Scale { lambda: f64 },
    /// Attention to each position is set to the row mean over the other columns.
    Uniform,
}

impl PerturbationMode {
    pub fn validate(&self) -> Result<()> {
        if let PerturbationMode::Scale { lambda } = *self {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "scale lambda must be finite and >= 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    /// Strictly increasing token indices.
    pub positions: Vec<usize>,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbationMode, positions: Vec<usize>) -> Self {
        PerturbationSpec { mode, positions }
    }

    fn validate(&self, n: usize) -> Result<()> {
        self.mode.validate()?;
        if let Some(w) = self.positions.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "positions must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&p) = self.positions.iter().find(|&&p| p >= n) {
            return Err(Error::Index { index: p, len: n });
        }
        Ok(())
    }
}

fn perturb_row(row: &mut [f64], targeted: &[bool], mode: PerturbationMode, free: usize) {
    let n = row.len();
    match mode {
        PerturbationMode::Zero => {
            for j in (0..n).filter(|&j| targeted[j]) {
                row[j] = 0.0;
            }
        }
        PerturbationMode::Scale { lambda } => {
            for j in (0..n).filter(|&j| targeted[j]) {
                row[j] *= lambda;
            }
        }
        PerturbationMode::Uniform => {
            let mean = (0..n).filter(|&j| !targeted[j]).map(|j| row[j]).sum::<f64>() / free as f64;
            for j in (0..n).filter(|&j| targeted[j]) {
                row[j] = mean;
            }
        }
    }
    let mass: f64 = row.iter().sum();
    if mass > 0.0 {
        row.iter_mut().for_each(|w| *w /= mass);
    } else {
        for j in 0..n {
            row[j] = if targeted[j] { 0.0 } else { 1.0 / free as f64 };
        }
    }
}

/// Applies `spec` to every layer/head matrix of `a`.
///
/// Empty `positions` returns `a` unchanged. A row whose mass vanishes
/// becomes uniform over the non-target columns.
pub fn perturb_attention(a: &AttentionTensor, spec: &PerturbationSpec) -> Result<AttentionTensor> {
    let n = a.n();
    spec.validate(n)?;
    if spec.positions.is_empty() {
        return Ok(a.clone());
    }
    let targeted: HashSet<usize> = spec.positions.iter().copied().collect();
    let targeted: Vec<bool> = (0..n).map(|j| targeted.contains(&j)).collect();
    let free = n - spec.positions.len();
    if free == 0 {
        let degenerate = match spec.mode {
            PerturbationMode::Zero | PerturbationMode::Uniform => true,
            PerturbationMode::Scale { lambda } => lambda == 0.0,
        };
        if degenerate {
            return Err(Error::DegeneratePerturbation(format!("all {n} columns targeted")));
        }
    }

    let mut weights = a.weights().to_vec();
    for row in weights.chunks_exact_mut(n) {
        perturb_row(row, &targeted, spec.mode, free);
    }
    AttentionTensor::new(a.layers(), a.heads(), n, weights)
}

/// Embedding displacement `|f(T) - f(T perturbed)|` when attention to
/// `spec.positions` is perturbed throughout the forward pass.
pub fn attention_sensitivity(backend: &dyn Backend, text: &Text, spec: &PerturbationSpec) -> Result<f64> {
    if !backend.capabilities().has_override {
        return Err(Error::Unsupported("attention override"));
    }
    let base = backend.embed(text)?;
    let attn = backend.attentions(text)?;
    let perturbed = perturb_attention(&attn, spec)?;
    let moved = backend.embed_with_attention_override(text, &perturbed)?;
    embedding_distance(&base, &moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tokenize, ReferenceModel, ReferenceModelConfig, SplitMix64};

    fn two_by_two() -> AttentionTensor {
        AttentionTensor::new(1, 1, 2, vec![0.6, 0.4, 0.3, 0.7]).unwrap()
    }

    fn random_tensor(rng: &mut SplitMix64, l: usize, h: usize, n: usize) -> AttentionTensor {
        let mut w = Vec::new();
        for _ in 0..l * h * n {
            let row = rng.fill_uniform(n, 0.0, 1.0);
            let s: f64 = row.iter().sum();
            w.extend(row.into_iter().map(|x| x / s));
        }
        AttentionTensor::new(l, h, n, w).unwrap()
    }

    #[test]
    fn empty_positions_is_identity() {
        let a = two_by_two();
        for mode in [
            PerturbationMode::Zero,
            PerturbationMode::Uniform,
            PerturbationMode::Scale { lambda: 3.0 },
        ] {
            assert_eq!(perturb_attention(&a, &PerturbationSpec::new(mode, vec![])).unwrap(), a);
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let mut rng = SplitMix64::new(1);
        let a = random_tensor(&mut rng, 2, 3, 6);
        let p = perturb_attention(
            &a,
            &PerturbationSpec::new(PerturbationMode::Scale { lambda: 1.0 }, vec![1, 4]),
        )
        .unwrap();
        for (x, y) in a.weights().iter().zip(p.weights()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_column_renormalizes() {
        let p = perturb_attention(&two_by_two(), &PerturbationSpec::new(PerturbationMode::Zero, vec![1])).unwrap();
        assert_eq!(p.weights(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_mode_uses_mean_of_other_columns() {
        let a = AttentionTensor::new(1, 1, 3, vec![0.5, 0.3, 0.2, 1.0, 0.0, 0.0, 0.2, 0.2, 0.6]).unwrap();
        let p = perturb_attention(&a, &PerturbationSpec::new(PerturbationMode::Uniform, vec![2])).unwrap();
        // row 0: col 2 <- (0.5 + 0.3) / 2 = 0.4, mass 1.2
        let expect = [0.5 / 1.2, 0.3 / 1.2, 0.4 / 1.2];
        for (x, e) in p.matrix(0, 0)[..3].iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn vanished_row_becomes_uniform_over_free_columns() {
        // causal first row puts all mass on column 0
        let a = AttentionTensor::new(1, 1, 3, vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.2, 0.3, 0.5]).unwrap();
        let p = perturb_attention(&a, &PerturbationSpec::new(PerturbationMode::Zero, vec![0])).unwrap();
        assert_eq!(&p.matrix(0, 0)[..3], &[0.0, 0.5, 0.5]);
        assert_eq!(&p.matrix(0, 0)[3..6], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn errors() {
        let a = two_by_two();
        assert!(matches!(
            perturb_attention(&a, &PerturbationSpec::new(PerturbationMode::Zero, vec![0, 1])),
            Err(Error::DegeneratePerturbation(_))
        ));
        assert!(matches!(
            perturb_attention(&a, &PerturbationSpec::new(PerturbationMode::Zero, vec![2])),
            Err(Error::Index { index: 2, len: 2 })
        ));
        assert!(matches!(
            perturb_attention(&a, &PerturbationSpec::new(PerturbationMode::Zero, vec![1, 0])),
            Err(Error::InvalidInput(_))
        ));
        assert!(perturb_attention(
            &a,
            &PerturbationSpec::new(PerturbationMode::Scale { lambda: 2.0 }, vec![0, 1])
        )
        .is_ok());
    }

    #[test]
    fn random_perturbations_stay_row_stochastic() {
        let mut rng = SplitMix64::new(2);
        for trial in 0..200 {
            let n = 2 + (rng.next_u64() % 10) as usize;
            let a = random_tensor(&mut rng, 2, 2, n);
            let positions: Vec<usize> = (0..n).filter(|_| rng.next_f64() < 0.3).take(n - 1).collect();
            let mode = match trial % 3 {
                0 => PerturbationMode::Zero,
                1 => PerturbationMode::Uniform,
                _ => PerturbationMode::Scale {
                    lambda: rng.uniform(0.0, 4.0),
                },
            };
            let p = perturb_attention(&a, &PerturbationSpec::new(mode, positions)).unwrap();
            assert!(p.max_row_sum_error() <= 1e-9);
        }
    }

    #[test]
    fn sensitivity_identities_on_reference_model() {
        let m = ReferenceModel::build(ReferenceModelConfig::with_seed(5)).unwrap();
        let t = tokenize("The woman fixed the engine.").unwrap();
        let empty = PerturbationSpec::new(PerturbationMode::Zero, vec![]);
        assert_eq!(attention_sensitivity(&m, &t, &empty).unwrap(), 0.0);
        let unit = PerturbationSpec::new(PerturbationMode::Scale { lambda: 1.0 }, vec![1]);
        assert!(attention_sensitivity(&m, &t, &unit).unwrap() <= 1e-9);
        let zero = PerturbationSpec::new(PerturbationMode::Zero, vec![1]);
        assert!(attention_sensitivity(&m, &t, &zero).unwrap() > 0.0);
    }
}
