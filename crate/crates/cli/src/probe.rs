use std::collections::BTreeMap;

use biasprobe::counterfactual::{nested_controls, LexiconPack};
use biasprobe::metrics::{
    attention_sensitivity, category_shift, composite_signals, contrastive_bias_loss, embedding_bias_flag,
    embedding_distance, generation_probability_gap, CategoryModel, CompositeSignals, PerturbationSpec,
};
use biasprobe::model::{tokenize, Backend};
use biasprobe::{CounterfactualGroup, EmbeddingVector, Text};
use serde::Serialize;

use crate::config::{Format, Provenance, RunConfig};
use crate::error::CliResult;
use crate::output::{csv_bytes, to_json, write_output};

/// Semantic categories of the seeded prototype classifier.
pub const CATEGORY_LABELS: [&str; 3] = ["favorable", "unfavorable", "neutral"];

/// Offset between the model seed and the category prototype seed.
const CATEGORY_SEED_OFFSET: u64 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct MemberProbe {
    pub term: String,
    pub group: Option<String>,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuation_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_sensitivity: Option<f64>,
    pub category: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDistance {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupProbe {
    pub template_id: String,
    pub category: String,
    pub members: Vec<MemberProbe>,
    pub distances: Vec<PairDistance>,
    pub max_distance: f64,
    pub flagged_pairs: usize,
    /// Contrastive hinge loss over every member pair at the configured margin.
    pub bias_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_p: Option<f64>,
    /// Category distribution of the members of each attribute group.
    pub category_distributions: BTreeMap<String, BTreeMap<String, f64>>,
    /// Largest total-variation distance between any two attribute groups'
    /// distributions; absent with fewer than two groups.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category_shift: Option<f64>,
    pub composite: CompositeSignals,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSummary {
    pub groups: usize,
    pub flagged_groups: usize,
    pub mean_score: f64,
    pub max_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub provenance: Provenance,
    pub category_labels: Vec<String>,
    pub summary: ProbeSummary,
    pub groups: Vec<GroupProbe>,
}

fn probe_group(
    group: &CounterfactualGroup,
    backend: &dyn Backend,
    config: &RunConfig,
    pack: &LexiconPack,
    categories: &CategoryModel,
    continuation: Option<&Text>,
) -> CliResult<GroupProbe> {
    let members = group.members();
    let vecs = members
        .iter()
        .map(|m| backend.embed(&m.text))
        .collect::<Result<Vec<_>, _>>()?;

    let mut distances = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let verdict = embedding_bias_flag(&vecs[i], &vecs[j], config.args.delta)?;
            distances.push(PairDistance {
                a: i,
                b: j,
                distance: embedding_distance(&vecs[i], &vecs[j])?,
                flagged: verdict.flagged,
            });
            pairs.push((vecs[i].clone(), vecs[j].clone()));
        }
    }
    let max_distance = distances.iter().map(|d| d.distance).fold(0.0, f64::max);

    let probs = match continuation {
        Some(c) => Some(
            members
                .iter()
                .map(|m| backend.continuation_probability(&m.text, c).map(|s| s.total_prob))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let delta_p = probs.as_deref().map(generation_probability_gap).transpose()?;

    let sensitivities = if config.weights.attn > 0.0 {
        Some(
            members
                .iter()
                .map(|m| {
                    attention_sensitivity(
                        backend,
                        &m.text,
                        &PerturbationSpec::new(config.mode, m.positions.clone()),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };

    let lexicon_category = pack.category(group.category());
    let mut by_group: BTreeMap<String, Vec<EmbeddingVector>> = BTreeMap::new();
    let mut member_probes = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        let attr_group = lexicon_category.and_then(|c| c.group_of(&m.term)).map(str::to_string);
        by_group
            .entry(attr_group.clone().unwrap_or_else(|| m.term.clone()))
            .or_default()
            .push(vecs[i].clone());
        member_probes.push(MemberProbe {
            term: m.term.clone(),
            group: attr_group,
            text: m.text.raw().to_string(),
            continuation_prob: probs.as_ref().map(|p| p[i]),
            attention_sensitivity: sensitivities.as_ref().map(|s| s[i]),
            category: biasprobe::metrics::classify_category(&vecs[i], categories)?.to_string(),
        });
    }
    let dists = by_group
        .iter()
        .map(|(g, vs)| Ok((g.clone(), categories.distribution(vs)?)))
        .collect::<biasprobe::Result<Vec<_>>>()?;
    let mut shift: Option<f64> = None;
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            let s = category_shift(&dists[i].1, &dists[j].1)?;
            shift = Some(shift.map_or(s, |m| m.max(s)));
        }
    }

    let composite = composite_signals(
        group,
        backend,
        continuation.unwrap_or(&members[0].text),
        &config.weights,
        config.mode,
    )?;

    Ok(GroupProbe {
        template_id: group.template_id().to_string(),
        category: group.category().to_string(),
        members: member_probes,
        flagged_pairs: distances.iter().filter(|d| d.flagged).count(),
        distances,
        max_distance,
        bias_loss: contrastive_bias_loss(&pairs, config.args.margin)?,
        delta_p,
        category_distributions: dists
            .into_iter()
            .map(|(g, d)| (g, d.labels().iter().cloned().zip(d.probs().iter().copied()).collect()))
            .collect(),
        category_shift: shift,
        composite,
    })
}

pub fn build_report(config: &RunConfig, backend: &dyn Backend) -> CliResult<ProbeReport> {
    config.check_capabilities(backend)?;
    let templates = config.templates()?;
    let pack = config.lexicon()?;
    let groups = nested_controls(&templates, &pack)?;
    let categories = CategoryModel::seeded(
        &CATEGORY_LABELS,
        backend.dim(),
        config.args.seed.wrapping_add(CATEGORY_SEED_OFFSET),
    )?;
    let continuation = if config.args.continuation.trim().is_empty() || !backend.capabilities().has_logprobs {
        None
    } else {
        Some(tokenize(&config.args.continuation)?)
    };

    let probes = groups
        .iter()
        .map(|g| {
            probe_group(g, backend, config, &pack, &categories, continuation.as_ref()).map_err(|mut e| {
                e.message = format!(
                    "template {:?} x category {:?}: {}",
                    g.template_id(),
                    g.category(),
                    e.message
                );
                e
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let scores: Vec<f64> = probes.iter().map(|p| p.composite.score).collect();
    let summary = ProbeSummary {
        groups: probes.len(),
        flagged_groups: probes.iter().filter(|p| p.flagged_pairs > 0).count(),
        mean_score: if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        },
        max_score: scores.iter().copied().fold(0.0, f64::max),
    };
    Ok(ProbeReport {
        provenance: config.provenance("probe"),
        category_labels: CATEGORY_LABELS.iter().map(|s| s.to_string()).collect(),
        summary,
        groups: probes,
    })
}

const CSV_HEADER: [&str; 9] = [
    "template_id",
    "category",
    "members",
    "max_distance",
    "flagged_pairs",
    "bias_loss",
    "delta_p",
    "category_shift",
    "composite_score",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per group. Provenance is carried as leading `#provenance` rows
/// in the first column so the file stays rectangular.
pub fn report_csv(report: &ProbeReport) -> Vec<u8> {
    let mut prov = Vec::new();
    crate::output::flatten(
        "provenance",
        &serde_json::to_value(&report.provenance).expect("serializable"),
        &mut prov,
    );
    let prov_rows = prov.into_iter().map(|(k, v)| {
        let mut row = vec![format!("#{k}"), v];
        row.resize(CSV_HEADER.len(), String::new());
        row
    });
    let rows = report.groups.iter().map(|g| {
        vec![
            g.template_id.clone(),
            g.category.clone(),
            g.members.len().to_string(),
            g.max_distance.to_string(),
            g.flagged_pairs.to_string(),
            g.bias_loss.to_string(),
            opt(g.delta_p),
            opt(g.category_shift),
            g.composite.score.to_string(),
        ]
    });
    csv_bytes(&CSV_HEADER, prov_rows.chain(rows))
}

pub fn run(config: &RunConfig) -> CliResult<()> {
    let backend = config.backend()?;
    let report = build_report(config, backend.as_ref())?;
    let bytes = match config.args.format {
        Format::Json => to_json(&report),
        Format::Csv => report_csv(&report),
    };
    write_output(config.args.out.as_deref(), &bytes)
}
