//! Detection and aggregate metrics over StereoSet instances.
//!
//! Each option is scored by the composite detector over a counterfactual
//! group built by swapping the instance's target term through its bias-type
//! lexicon inside the option text. The prediction ranks only the stereotype
//! and anti-stereotype options; exact ties count as incorrect.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{bin_alignment, BiasType, GoldLabel, LoadedDataset, PairJudgement, StereoInstance};
use crate::counterfactual::{instantiate, prefix_group, template_from_text, LexiconPack};
use crate::error::{Error, Result};
use crate::metrics::{
    composite_bias_score, cosine_similarity, embedding_bias_flag, CompositeWeights, PerturbationMode, DEFAULT_DELTA,
};
use crate::model::{tokenize, Backend};
use crate::types::{AttributeCategory, AttributeTerm, BiasReport, CounterfactualGroup, PromptTemplate, SLOT};

/// Continuation whose probability is compared across swapped options.
pub const DEFAULT_CONTINUATION: &str = "this is true .";

/// Default number of alignment-curve bins.
pub const DEFAULT_BINS: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct DetectConfig {
    pub weights: CompositeWeights,
    pub mode: PerturbationMode,
    pub continuation: String,
    #[serde(skip)]
    pub lexicon: LexiconPack,
    pub delta: f64,
    pub bins: usize,
    pub neutral_prefixes: Vec<String>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            weights: CompositeWeights::default(),
            mode: PerturbationMode::Zero,
            continuation: DEFAULT_CONTINUATION.to_string(),
            lexicon: LexiconPack::builtin(),
            delta: DEFAULT_DELTA,
            bins: DEFAULT_BINS,
            neutral_prefixes: super::builtin_neutral_prefixes(),
        }
    }
}

/// A counterfactual group for one option. `fallback` is set when the target
/// term does not occur in the option and the group is built around the
/// context instead.
#[derive(Debug, Clone, Serialize)]
pub struct OptionGroup {
    pub group: CounterfactualGroup,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub id: String,
    pub bias_type: BiasType,
    /// One score per option, in the instance's option order.
    pub scores: Vec<f64>,
    /// Option index judged more stereotyped; `None` on an exact tie.
    pub predicted_stereotype: Option<usize>,
    pub correct: bool,
}

impl DetectionResult {
    pub fn from_scores(
        id: impl Into<String>,
        bias_type: BiasType,
        scores: Vec<f64>,
        stereo: usize,
        anti: usize,
    ) -> Self {
        let predicted_stereotype = if scores[stereo] > scores[anti] {
            Some(stereo)
        } else if scores[anti] > scores[stereo] {
            Some(anti)
        } else {
            None
        };
        DetectionResult {
            id: id.into(),
            bias_type,
            scores,
            predicted_stereotype,
            correct: predicted_stereotype == Some(stereo),
        }
    }
}

/// Target first, then every lexicon term that tokenizes differently.
fn swap_category(instance: &StereoInstance, lexicon: &LexiconPack) -> Result<AttributeCategory> {
    let base = lexicon.category(instance.bias_type.as_str()).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "lexicon pack has no {:?} category",
            instance.bias_type.as_str()
        ))
    })?;
    let target_tokens = tokenize(&instance.target)?.tokens().to_vec();
    let mut terms = vec![AttributeTerm {
        term: instance.target.clone(),
        group: "target".into(),
    }];
    for t in base.terms() {
        if tokenize(&t.term)?.tokens() != target_tokens.as_slice() {
            terms.push(t.clone());
        }
    }
    AttributeCategory::new(base.name(), terms)
}

pub fn build_option_group(instance: &StereoInstance, option: usize, lexicon: &LexiconPack) -> Result<OptionGroup> {
    let category = swap_category(instance, lexicon)?;
    let opt = &instance.options[option];
    let id = format!("{}/{}", instance.id, opt.gold);
    let raw = opt.text.raw();
    let (template, fallback) = match template_from_text(id.clone(), raw, &instance.target) {
        Some(t) => (t, false),
        None => {
            let pattern = match template_from_text(id.clone(), instance.context.raw(), &instance.target) {
                Some(ctx) => format!("{} {raw}", ctx.pattern()),
                None => format!("{SLOT} : {raw}"),
            };
            (PromptTemplate::new(id, pattern)?, true)
        }
    };
    Ok(OptionGroup {
        group: instantiate(&template, &category)?,
        fallback,
    })
}

fn score_option(og: &OptionGroup, backend: &dyn Backend, config: &DetectConfig) -> Result<f64> {
    let continuation = tokenize(&config.continuation)?;
    let weights = if og.fallback {
        CompositeWeights::embedding_only()
    } else {
        config.weights
    };
    composite_bias_score(&og.group, backend, &continuation, &weights, config.mode)
}

fn detect_with_groups(
    instance: &StereoInstance,
    backend: &dyn Backend,
    config: &DetectConfig,
) -> Result<(DetectionResult, Vec<OptionGroup>)> {
    let groups = (0..instance.options.len())
        .map(|i| build_option_group(instance, i, &config.lexicon))
        .collect::<Result<Vec<_>>>()?;
    let scores = groups
        .iter()
        .map(|g| score_option(g, backend, config))
        .collect::<Result<Vec<_>>>()?;
    let result = DetectionResult::from_scores(
        instance.id.clone(),
        instance.bias_type,
        scores,
        instance.option_index(GoldLabel::Stereotype),
        instance.option_index(GoldLabel::AntiStereotype),
    );
    Ok((result, groups))
}

pub fn detect(instance: &StereoInstance, backend: &dyn Backend, config: &DetectConfig) -> Result<DetectionResult> {
    detect_with_groups(instance, backend, config)
        .map(|(r, _)| r)
        .map_err(|e| e.context(format!("instance {:?}", instance.id)))
}

/// Percentage of results whose prediction matches the gold stereotype.
pub fn bias_detection_accuracy(results: &[DetectionResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyResults("no detection results"));
    }
    let correct = results.iter().filter(|r| r.correct).count();
    Ok(100.0 * correct as f64 / results.len() as f64)
}

/// Order-independent mean: the values are summed in sorted order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// `100 x` the mean, over all within-group member pairs, of cosine
/// similarity clamped below at 0.
pub fn semantic_consistency(groups: &[CounterfactualGroup], backend: &dyn Backend) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyResults("no groups for semantic consistency"));
    }
    let per_group = groups
        .par_iter()
        .map(|g| {
            let vecs = g
                .members()
                .iter()
                .map(|m| backend.embed(&m.text))
                .collect::<Result<Vec<_>>>()?;
            let mut sims = Vec::new();
            for i in 0..vecs.len() {
                for j in i + 1..vecs.len() {
                    sims.push(cosine_similarity(&vecs[i], &vecs[j])?.max(0.0));
                }
            }
            Ok(sims)
        })
        .collect::<Result<Vec<_>>>()?;
    let sims: Vec<f64> = per_group.into_iter().flatten().collect();
    if sims.is_empty() {
        return Err(Error::EmptyResults("groups have no member pairs"));
    }
    Ok((100.0 * stable_mean(sims)).clamp(0.0, 100.0))
}

/// `100 x` the mean absolute change of the composite score when each
/// neutral prefix is prepended to every member of each group.
pub fn contextual_sensitivity(
    groups: &[CounterfactualGroup],
    backend: &dyn Backend,
    neutral_prefixes: &[String],
    config: &DetectConfig,
) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyResults("no groups for contextual sensitivity"));
    }
    if neutral_prefixes.is_empty() {
        return Err(Error::EmptyResults("no neutral prefixes"));
    }
    let continuation = tokenize(&config.continuation)?;
    let score = |g: &CounterfactualGroup| composite_bias_score(g, backend, &continuation, &config.weights, config.mode);
    let shifts = groups
        .par_iter()
        .map(|g| {
            let base = score(g)?;
            neutral_prefixes
                .iter()
                .map(|p| Ok((score(&prefix_group(g, p)?)? - base).abs()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(100.0 * stable_mean(shifts.into_iter().flatten().collect()))
}

/// Accuracy per bias type; types without instances are omitted.
pub fn per_dimension_accuracy(
    results: &[DetectionResult],
    instances: &[StereoInstance],
) -> Result<BTreeMap<String, f64>> {
    let types: BTreeMap<&str, BiasType> = instances.iter().map(|i| (i.id.as_str(), i.bias_type)).collect();
    let mut tally: BTreeMap<BiasType, (usize, usize)> = BTreeMap::new();
    for r in results {
        let bt = types
            .get(r.id.as_str())
            .ok_or_else(|| Error::InconsistentInputs(format!("no instance with id {:?}", r.id)))?;
        let entry = tally.entry(*bt).or_default();
        entry.0 += usize::from(r.correct);
        entry.1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|(bt, (c, n))| (bt.to_string(), c as f64 / n as f64))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub results: Vec<DetectionResult>,
    pub report: BiasReport,
}

/// Runs the full pipeline over a loaded dataset.
///
/// Semantic consistency and contextual sensitivity are computed over the
/// stereotype and anti-stereotype option groups. Alignment pairs are the
/// (stereotype, anti-stereotype) options of each instance, each judged
/// against its first swapped counterpart.
pub fn evaluate(dataset: &LoadedDataset, backend: &dyn Backend, config: &DetectConfig) -> Result<Evaluation> {
    if dataset.instances.is_empty() {
        return Err(Error::EmptyResults("no instances"));
    }
    config.weights.validate()?;

    let outcomes = dataset
        .instances
        .par_iter()
        .map(|inst| {
            let (result, groups) = detect_with_groups(inst, backend, config)?;
            let stereo = inst.option_index(GoldLabel::Stereotype);
            let anti = inst.option_index(GoldLabel::AntiStereotype);
            let flag = |g: &OptionGroup| -> Result<bool> {
                let m = g.group.members();
                Ok(
                    embedding_bias_flag(&backend.embed(&m[0].text)?, &backend.embed(&m[1].text)?, config.delta)?
                        .flagged,
                )
            };
            let judgement = PairJudgement {
                similarity: cosine_similarity(
                    &backend.embed(&inst.options[stereo].text)?,
                    &backend.embed(&inst.options[anti].text)?,
                )?,
                flagged_a: flag(&groups[stereo])?,
                flagged_b: flag(&groups[anti])?,
            };
            let ranked = vec![groups[stereo].group.clone(), groups[anti].group.clone()];
            Ok((result, ranked, judgement))
        })
        .map(|r: Result<_>| r.map_err(|e| e.context("evaluation")))
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::with_capacity(outcomes.len());
    let mut groups = Vec::new();
    let mut judgements = Vec::with_capacity(outcomes.len());
    for (r, g, j) in outcomes {
        results.push(r);
        groups.extend(g);
        judgements.push(j);
    }

    let report = BiasReport {
        detection_accuracy_pct: bias_detection_accuracy(&results)?,
        semantic_consistency_pct: semantic_consistency(&groups, backend)?,
        contextual_sensitivity_pct: contextual_sensitivity(&groups, backend, &config.neutral_prefixes, config)?,
        per_dimension: per_dimension_accuracy(&results, &dataset.instances)?,
        alignment_curve: bin_alignment(&judgements, config.bins)?,
        instance_count: dataset.instances.len(),
        skipped_instances: dataset.skipped,
    };
    Ok(Evaluation { results, report })
}
