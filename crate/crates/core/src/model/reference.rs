//! Seeded reference mini-transformer.
//!
//! Pre-LayerNorm, causal, GELU feed-forward, sinusoidal positions, output
//! head tied to the token embedding table. The text embedding is the mean of
//! the final (post-LayerNorm) hidden states over token positions.
//!
//! Weight draw order from a single [`SplitMix64`] stream seeded with
//! `config.seed`, every draw uniform in `[-0.1, 0.1)`:
//!
//! 1. token embedding table, `vocab_size x d_model`, row-major;
//! 2. for each layer in order: `W_q`, `W_k`, `W_v`, `W_o` (each
//!    `d_model x d_model`), FFN in (`d_model x ffn_dim`), FFN out
//!    (`ffn_dim x d_model`), then LayerNorm 1 gain, LayerNorm 1 bias,
//!    LayerNorm 2 gain, LayerNorm 2 bias (each `d_model`);
//! 3. final LayerNorm gain, final LayerNorm bias.
//!
//! Projection matrices are stored `[in][out]`. LayerNorm gains are
//! `1 + draw`, biases are the draw itself. The positional table is
//! sinusoidal and consumes no draws.

use serde::{Deserialize, Serialize};

use super::rng::SplitMix64;
use super::tokenizer::token_ids;
use super::{Backend, BackendCapabilities};
use crate::error::{Error, Result};
use crate::types::{AttentionTensor, ContinuationScore, EmbeddingVector, Text};

const INIT_RANGE: f64 = 0.1;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ReferenceModelConfig {
    fn default() -> Self {
        ReferenceModelConfig {
            d_model: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            max_seq: 64,
            vocab_size: 1024,
            seed: 42,
        }
    }
}

impl ReferenceModelConfig {
    pub fn with_seed(seed: u64) -> Self {
        ReferenceModelConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_seq < 2 {
            return Err(Error::InvalidConfig(format!(
                "max_seq must be at least 2, got {}",
                self.max_seq
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Parameters of one transformer block.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ffn_in: Vec<f64>,
    pub ffn_out: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReferenceWeights {
    pub token_embedding: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
}

impl ReferenceWeights {
    fn draw(config: &ReferenceModelConfig) -> Self {
        let mut rng = SplitMix64::new(config.seed);
        let d = config.d_model;
        let f = config.ffn_dim;
        let mut draw = |len: usize| rng.fill_uniform(len, -INIT_RANGE, INIT_RANGE);

        let token_embedding = draw(config.vocab_size * d);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let wq = draw(d * d);
            let wk = draw(d * d);
            let wv = draw(d * d);
            let wo = draw(d * d);
            let ffn_in = draw(d * f);
            let ffn_out = draw(f * d);
            let ln1_gain = draw(d).into_iter().map(|x| 1.0 + x).collect();
            let ln1_bias = draw(d);
            let ln2_gain = draw(d).into_iter().map(|x| 1.0 + x).collect();
            let ln2_bias = draw(d);
            layers.push(LayerWeights {
                wq,
                wk,
                wv,
                wo,
                ffn_in,
                ffn_out,
                ln1_gain,
                ln1_bias,
                ln2_gain,
                ln2_bias,
            });
        }
        let final_gain = draw(d).into_iter().map(|x| 1.0 + x).collect();
        let final_bias = draw(d);
        ReferenceWeights {
            token_embedding,
            layers,
            final_gain,
            final_bias,
        }
    }
}

/// Sinusoidal position encoding for position `pos`, dimension `d`.
pub(crate) fn sinusoid(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / freq;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// `x * W` for a row vector `x` and `W` stored `[in][out]`.
fn project(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

struct Forward {
    /// Final post-LayerNorm hidden states, one row per position.
    hidden: Vec<Vec<f64>>,
    attention: Vec<f64>,
}

/// The seeded reference transformer backend.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    config: ReferenceModelConfig,
    weights: ReferenceWeights,
}

impl ReferenceModel {
    pub fn build(config: ReferenceModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = ReferenceWeights::draw(&config);
        Ok(ReferenceModel { config, weights })
    }

    pub fn config(&self) -> &ReferenceModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ReferenceWeights {
        &self.weights
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: n,
                max: self.config.max_seq,
            });
        }
        Ok(())
    }

    fn forward(&self, ids: &[usize], override_: Option<&AttentionTensor>) -> Forward {
        let cfg = &self.config;
        let d = cfg.d_model;
        let n = ids.len();
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let emb_scale = (d as f64).sqrt();

        let mut x: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                let row = &self.weights.token_embedding[id * d..(id + 1) * d];
                row.iter()
                    .zip(sinusoid(pos, d))
                    .map(|(e, p)| e * emb_scale + p)
                    .collect()
            })
            .collect();

        let mut attention = Vec::with_capacity(cfg.layers * cfg.heads * n * n);
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let h: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, &lw.ln1_gain, &lw.ln1_bias)).collect();
            let q: Vec<_> = h.iter().map(|r| project(r, &lw.wq, d)).collect();
            let k: Vec<_> = h.iter().map(|r| project(r, &lw.wk, d)).collect();
            let v: Vec<_> = h.iter().map(|r| project(r, &lw.wv, d)).collect();

            let mut ctx = vec![vec![0.0; d]; n];
            for head in 0..cfg.heads {
                let cols = head * hd..(head + 1) * hd;
                let mut probs = vec![0.0; n * n];
                for i in 0..n {
                    let row = &mut probs[i * n..(i + 1) * n];
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| {
                            q[i][cols.clone()]
                                .iter()
                                .zip(&k[j][cols.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                                * scale
                        })
                        .collect();
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (j, e) in exps.into_iter().enumerate() {
                        row[j] = e / z;
                    }
                }
                let used: &[f64] = match override_ {
                    Some(t) => t.matrix(l, head),
                    None => &probs,
                };
                for i in 0..n {
                    for j in 0..n {
                        let p = used[i * n + j];
                        if p != 0.0 {
                            for c in cols.clone() {
                                ctx[i][c] += p * v[j][c];
                            }
                        }
                    }
                }
                attention.extend_from_slice(used);
            }

            for (xi, ci) in x.iter_mut().zip(&ctx) {
                for (a, b) in xi.iter_mut().zip(project(ci, &lw.wo, d)) {
                    *a += b;
                }
            }
            for xi in x.iter_mut() {
                let h2 = layer_norm(xi, &lw.ln2_gain, &lw.ln2_bias);
                let inner: Vec<f64> = project(&h2, &lw.ffn_in, cfg.ffn_dim).into_iter().map(gelu).collect();
                for (a, b) in xi.iter_mut().zip(project(&inner, &lw.ffn_out, d)) {
                    *a += b;
                }
            }
        }

        let hidden = x
            .iter()
            .map(|r| layer_norm(r, &self.weights.final_gain, &self.weights.final_bias))
            .collect();
        Forward { hidden, attention }
    }

    fn mean_pool(hidden: &[Vec<f64>]) -> Result<EmbeddingVector> {
        let d = hidden[0].len();
        let n = hidden.len() as f64;
        let mut out = vec![0.0; d];
        for row in hidden {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        EmbeddingVector::new(out)
    }

    /// Log-softmax over the tied output head at one hidden state.
    fn log_softmax_logits(&self, h: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        let logits: Vec<f64> = self
            .weights
            .token_embedding
            .chunks_exact(d)
            .map(|e| e.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.into_iter().map(|l| (l - lse).min(0.0)).collect()
    }

    /// `log P(token_i | tokens_<i)` for `i = 1..n`; length `n - 1`.
    pub fn sequence_logprobs(&self, text: &Text) -> Result<Vec<f64>> {
        self.check_len(text.token_count())?;
        let ids = token_ids(text, self.config.vocab_size);
        let fwd = self.forward(&ids, None);
        Ok((1..ids.len())
            .map(|i| self.log_softmax_logits(&fwd.hidden[i - 1])[ids[i]])
            .collect())
    }
}

impl Backend for ReferenceModel {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            has_attention: true,
            has_override: true,
            has_logprobs: true,
        }
    }

    fn dim(&self) -> usize {
        self.config.d_model
    }

    fn embed(&self, text: &Text) -> Result<EmbeddingVector> {
        self.check_len(text.token_count())?;
        let ids = token_ids(text, self.config.vocab_size);
        Self::mean_pool(&self.forward(&ids, None).hidden)
    }

    fn continuation_probability(&self, prompt: &Text, continuation: &Text) -> Result<ContinuationScore> {
        let n_prompt = prompt.token_count();
        let total = n_prompt + continuation.token_count();
        self.check_len(total)?;
        let mut ids = token_ids(prompt, self.config.vocab_size);
        ids.extend(token_ids(continuation, self.config.vocab_size));
        let fwd = self.forward(&ids, None);
        let logprobs = (n_prompt..total)
            .map(|i| self.log_softmax_logits(&fwd.hidden[i - 1])[ids[i]])
            .collect();
        ContinuationScore::new(prompt.clone(), continuation.clone(), logprobs)
    }

    fn attentions(&self, text: &Text) -> Result<AttentionTensor> {
        self.check_len(text.token_count())?;
        let ids = token_ids(text, self.config.vocab_size);
        let fwd = self.forward(&ids, None);
        AttentionTensor::new(self.config.layers, self.config.heads, ids.len(), fwd.attention)
    }

    fn embed_with_attention_override(&self, text: &Text, override_: &AttentionTensor) -> Result<EmbeddingVector> {
        self.check_len(text.token_count())?;
        let expected = (self.config.layers, self.config.heads, text.token_count());
        if override_.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "override shape {:?} but forward pass needs {:?}",
                override_.shape(),
                expected
            )));
        }
        let ids = token_ids(text, self.config.vocab_size);
        Self::mean_pool(&self.forward(&ids, Some(override_)).hidden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::embedding_distance;
    use crate::model::tokenize;

    fn model(seed: u64) -> ReferenceModel {
        ReferenceModel::build(ReferenceModelConfig::with_seed(seed)).unwrap()
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = ReferenceModelConfig {
            d_model: 33,
            heads: 2,
            ..Default::default()
        };
        assert!(matches!(ReferenceModel::build(cfg), Err(Error::InvalidConfig(_))));
        let cfg = ReferenceModelConfig {
            max_seq: 1,
            ..Default::default()
        };
        assert!(matches!(ReferenceModel::build(cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let t = tokenize("The nurse smiled at the patient.").unwrap();
        let a = model(42).embed(&t).unwrap();
        let b = model(42).embed(&t).unwrap();
        assert_eq!(a, b);
        assert_eq!(embedding_distance(&a, &b).unwrap(), 0.0);
        let c = model(43).embed(&t).unwrap();
        assert!(embedding_distance(&a, &c).unwrap() > 0.0);
        let d = model(1).embed(&t).unwrap();
        let e = model(2).embed(&t).unwrap();
        assert!(embedding_distance(&d, &e).unwrap() > 0.0);
    }

    #[test]
    fn too_long_rejected() {
        let m = ReferenceModel::build(ReferenceModelConfig {
            max_seq: 4,
            ..Default::default()
        })
        .unwrap();
        let t = tokenize("one two three four five").unwrap();
        assert!(matches!(m.embed(&t), Err(Error::SequenceTooLong { len: 5, max: 4 })));
        let p = tokenize("one two three").unwrap();
        let c = tokenize("four five").unwrap();
        assert!(matches!(
            m.continuation_probability(&p, &c),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn attention_shape_and_rows() {
        let m = model(7);
        let t = tokenize("She is an engineer , he is a teacher .").unwrap();
        let a = m.attentions(&t).unwrap();
        assert_eq!(a.shape(), (2, 2, t.token_count()));
        assert!(a.max_row_sum_error() <= 1e-9);
        assert_eq!(a, m.attentions(&t).unwrap());
    }

    #[test]
    fn identity_override_is_bitwise() {
        let m = model(3);
        let t = tokenize("The engineer fixed the engine.").unwrap();
        let a = m.attentions(&t).unwrap();
        assert_eq!(m.embed_with_attention_override(&t, &a).unwrap(), m.embed(&t).unwrap());
    }

    #[test]
    fn uniform_override_gives_different_finite_embedding() {
        let m = model(3);
        let t = tokenize("The engineer fixed the engine.").unwrap();
        let n = t.token_count();
        let u = AttentionTensor::new(2, 2, n, vec![1.0 / n as f64; 4 * n * n]).unwrap();
        let e = m.embed_with_attention_override(&t, &u).unwrap();
        assert!(e.values().iter().all(|v| v.is_finite()));
        assert!(embedding_distance(&e, &m.embed(&t).unwrap()).unwrap() > 0.0);
    }

    #[test]
    fn override_shape_checked() {
        let m = model(3);
        let t = tokenize("a b c").unwrap();
        let wrong = AttentionTensor::new(2, 2, 2, vec![0.5; 16]).unwrap();
        assert!(matches!(
            m.embed_with_attention_override(&t, &wrong),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn single_token_continuation_is_softmax_probability() {
        let m = model(11);
        let p = tokenize("the doctor said").unwrap();
        let c = tokenize("yes").unwrap();
        let s = m.continuation_probability(&p, &c).unwrap();
        let joined = tokenize("the doctor said yes").unwrap();
        let lp = *m.sequence_logprobs(&joined).unwrap().last().unwrap();
        assert_eq!(s.token_logprobs, vec![lp]);
        assert_eq!(s.total_prob, lp.exp());
    }

    #[test]
    fn two_token_continuation_is_product_of_steps() {
        let m = model(11);
        let p = tokenize("the doctor said").unwrap();
        let both = m
            .continuation_probability(&p, &tokenize("yes please").unwrap())
            .unwrap();
        let first = m.continuation_probability(&p, &tokenize("yes").unwrap()).unwrap();
        let second = m
            .continuation_probability(&tokenize("the doctor said yes").unwrap(), &tokenize("please").unwrap())
            .unwrap();
        assert!((both.total_prob - first.total_prob * second.total_prob).abs() <= 1e-12);
    }
}
