//! Reads the published StereoSet JSON schema and the canonical JSONL form.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{BiasType, GoldLabel, StereoInstance, StereoOption};
use crate::error::{Error, Result};
use crate::model::tokenize;

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub instances: Vec<StereoInstance>,
    /// Entries dropped for not carrying exactly one option per gold label.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct PublicFile {
    data: PublicData,
}

#[derive(Deserialize)]
struct PublicData {
    #[serde(default)]
    intrasentence: Vec<PublicEntry>,
    #[serde(default)]
    intersentence: Vec<PublicEntry>,
}

#[derive(Deserialize)]
struct PublicEntry {
    id: String,
    bias_type: String,
    target: String,
    context: String,
    sentences: Vec<PublicSentence>,
}

#[derive(Deserialize)]
struct PublicSentence {
    sentence: String,
    gold_label: String,
}

/// One line of the canonical JSONL form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub id: String,
    pub bias_type: String,
    pub target: String,
    pub context: String,
    pub options: Vec<CanonicalOption>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalOption {
    pub text: String,
    pub gold_label: String,
}

impl From<&StereoInstance> for CanonicalRecord {
    fn from(inst: &StereoInstance) -> Self {
        CanonicalRecord {
            id: inst.id.clone(),
            bias_type: inst.bias_type.to_string(),
            target: inst.target.clone(),
            context: inst.context.raw().to_string(),
            options: inst
                .options
                .iter()
                .map(|o| CanonicalOption {
                    text: o.text.raw().to_string(),
                    gold_label: o.gold.to_string(),
                })
                .collect(),
        }
    }
}

enum Outcome {
    Kept(StereoInstance),
    Skipped(String),
}

fn build(
    id: String,
    bias_type: &str,
    target: String,
    context: &str,
    options: Vec<(String, String)>,
) -> Result<Outcome> {
    let bias_type: BiasType = bias_type
        .parse()
        .map_err(|_| Error::Format(format!("instance {id:?}: unknown bias_type {bias_type:?}")))?;
    let mut parsed = Vec::with_capacity(options.len());
    for (text, label) in options {
        let gold: GoldLabel = label
            .parse()
            .map_err(|_| Error::Format(format!("instance {id:?}: unknown gold_label {label:?}")))?;
        parsed.push((text, gold));
    }
    for wanted in GoldLabel::ALL {
        let count = parsed.iter().filter(|(_, g)| *g == wanted).count();
        if count != 1 || parsed.len() != 3 {
            return Ok(Outcome::Skipped(format!(
                "instance {id:?} has {count} {wanted} options among {}",
                parsed.len()
            )));
        }
    }
    let context = match tokenize(context) {
        Ok(t) => t,
        Err(_) => return Ok(Outcome::Skipped(format!("instance {id:?} has an empty context"))),
    };
    let mut opts = Vec::with_capacity(3);
    for (text, gold) in parsed {
        match tokenize(&text) {
            Ok(text) => opts.push(StereoOption { text, gold }),
            Err(_) => return Ok(Outcome::Skipped(format!("instance {id:?} has an empty option"))),
        }
    }
    Ok(Outcome::Kept(StereoInstance {
        id,
        bias_type,
        target,
        context,
        options: opts,
    }))
}

fn collect(outcomes: impl IntoIterator<Item = Result<Outcome>>) -> Result<LoadedDataset> {
    let mut instances = Vec::new();
    let mut skipped = 0;
    for o in outcomes {
        match o? {
            Outcome::Kept(i) => instances.push(i),
            Outcome::Skipped(why) => {
                warn!("skipping {why}");
                skipped += 1;
            }
        }
    }
    Ok(LoadedDataset { instances, skipped })
}

fn parse_public(file: PublicFile) -> Result<LoadedDataset> {
    let entries = file.data.intrasentence.into_iter().chain(file.data.intersentence);
    collect(entries.map(|e| {
        build(
            e.id,
            &e.bias_type,
            e.target,
            &e.context,
            e.sentences.into_iter().map(|s| (s.sentence, s.gold_label)).collect(),
        )
    }))
}

fn parse_jsonl(src: &str) -> Result<LoadedDataset> {
    let records = src
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<CanonicalRecord>(line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(records.into_iter().map(|r| {
        build(
            r.id,
            &r.bias_type,
            r.target,
            &r.context,
            r.options.into_iter().map(|o| (o.text, o.gold_label)).collect(),
        )
    }))
}

/// Parses either format: a single JSON document with a `data` object is
/// read as the published schema, anything else as canonical JSONL.
pub fn parse_stereoset(src: &str) -> Result<LoadedDataset> {
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(src) {
        if value.get("data").is_some() {
            let file: PublicFile =
                serde_json::from_value(value).map_err(|e| Error::Format(format!("StereoSet schema: {e}")))?;
            return parse_public(file);
        }
    }
    parse_jsonl(src)
}

pub fn load_stereoset(path: &Path) -> Result<LoadedDataset> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stereoset(&src).map_err(|e| e.context(path.display().to_string()))
}

pub fn to_canonical_jsonl(instances: &[StereoInstance]) -> String {
    instances
        .iter()
        .map(|i| serde_json::to_string(&CanonicalRecord::from(i)).expect("plain data serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, labels: &[&str]) -> String {
        let sentences: Vec<String> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!(r#"{{"sentence":"Option {i} here.","gold_label":"{l}","id":"s{i}"}}"#))
            .collect();
        format!(
            r#"{{"id":"{id}","bias_type":"gender","target":"mother","context":"The mother was BLANK.","sentences":[{}]}}"#,
            sentences.join(",")
        )
    }

    fn doc(intra: &[String], inter: &[String]) -> String {
        format!(
            r#"{{"version":"1.0-test","data":{{"intrasentence":[{}],"intersentence":[{}]}}}}"#,
            intra.join(","),
            inter.join(",")
        )
    }

    const GOOD: [&str; 3] = ["stereotype", "anti-stereotype", "unrelated"];

    #[test]
    fn parses_both_sections() {
        let src = doc(&[entry("a", &GOOD)], &[entry("b", &GOOD), entry("c", &GOOD)]);
        let d = parse_stereoset(&src).unwrap();
        assert_eq!(d.instances.len(), 3);
        assert_eq!(d.skipped, 0);
        assert_eq!(d.instances[0].id, "a");
    }

    #[test]
    fn duplicate_label_is_skipped() {
        let src = doc(
            &[
                entry("a", &GOOD),
                entry("bad", &["stereotype", "stereotype", "unrelated"]),
            ],
            &[],
        );
        let d = parse_stereoset(&src).unwrap();
        assert_eq!(d.instances.len(), 1);
        assert_eq!(d.skipped, 1);
        let short = doc(&[entry("short", &["stereotype", "anti-stereotype"])], &[]);
        assert_eq!(parse_stereoset(&short).unwrap().skipped, 1);
    }

    #[test]
    fn unknown_label_is_format_error() {
        let src = doc(&[entry("a", &["stereotype", "anti-stereotype", "neutral"])], &[]);
        assert!(matches!(parse_stereoset(&src), Err(Error::Format(_))));
    }

    #[test]
    fn empty_arrays() {
        let d = parse_stereoset(&doc(&[], &[])).unwrap();
        assert!(d.instances.is_empty());
        assert_eq!(d.skipped, 0);
    }

    #[test]
    fn garbage_is_format_error() {
        assert!(matches!(parse_stereoset("{not json"), Err(Error::Format(_))));
    }

    #[test]
    fn canonical_round_trip() {
        let src = doc(&[entry("a", &GOOD)], &[entry("b", &GOOD)]);
        let d = parse_stereoset(&src).unwrap();
        let jsonl = to_canonical_jsonl(&d.instances);
        let back = parse_stereoset(&jsonl).unwrap();
        assert_eq!(back.instances, d.instances);
    }
}
