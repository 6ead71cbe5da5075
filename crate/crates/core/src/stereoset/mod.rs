//! StereoSet ingestion and the evaluation pipeline: detection accuracy,
//! semantic consistency, contextual sensitivity, per-dimension accuracy and
//! the similarity/conflict alignment curve.

mod curve;
mod harness;
mod loader;

pub use curve::{alignment_curve, bin_alignment, PairJudgement};
pub use harness::{
    bias_detection_accuracy, build_option_group, contextual_sensitivity, detect, evaluate, per_dimension_accuracy,
    semantic_consistency, DetectConfig, DetectionResult, Evaluation, OptionGroup, DEFAULT_BINS, DEFAULT_CONTINUATION,
};
pub use loader::{
    load_stereoset, parse_stereoset, to_canonical_jsonl, CanonicalOption, CanonicalRecord, LoadedDataset,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::Text;

const NEUTRAL_PREFIXES: &str = include_str!("../../data/neutral_prefixes.json");

/// Miniature 20-instance dataset in the published schema, five instances
/// per bias type.
pub const MINI_FIXTURE: &str = include_str!("../../data/stereoset_mini.json");

/// The bundled topic-neutral prefixes used for contextual sensitivity.
pub fn builtin_neutral_prefixes() -> Vec<String> {
    #[derive(Deserialize)]
    struct File {
        prefixes: Vec<String>,
    }
    serde_json::from_str::<File>(NEUTRAL_PREFIXES)
        .expect("bundled prefixes are valid")
        .prefixes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasType {
    Gender,
    Profession,
    Religion,
    Race,
}

impl BiasType {
    pub const ALL: [BiasType; 4] = [
        BiasType::Gender,
        BiasType::Profession,
        BiasType::Religion,
        BiasType::Race,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasType::Gender => "gender",
            BiasType::Profession => "profession",
            BiasType::Religion => "religion",
            BiasType::Race => "race",
        }
    }
}

impl fmt::Display for BiasType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        BiasType::ALL.into_iter().find(|b| b.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoldLabel {
    #[serde(rename = "stereotype")]
    Stereotype,
    #[serde(rename = "anti-stereotype")]
    AntiStereotype,
    #[serde(rename = "unrelated")]
    Unrelated,
}

impl GoldLabel {
    pub const ALL: [GoldLabel; 3] = [GoldLabel::Stereotype, GoldLabel::AntiStereotype, GoldLabel::Unrelated];

    pub fn as_str(self) -> &'static str {
        match self {
            GoldLabel::Stereotype => "stereotype",
            GoldLabel::AntiStereotype => "anti-stereotype",
            GoldLabel::Unrelated => "unrelated",
        }
    }
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GoldLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        GoldLabel::ALL.into_iter().find(|g| g.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StereoOption {
    pub text: Text,
    pub gold: GoldLabel,
}

/// A context with exactly one stereotype, anti-stereotype and unrelated option.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StereoInstance {
    pub id: String,
    pub bias_type: BiasType,
    pub target: String,
    pub context: Text,
    pub options: Vec<StereoOption>,
}

impl StereoInstance {
    pub fn option_index(&self, gold: GoldLabel) -> usize {
        self.options
            .iter()
            .position(|o| o.gold == gold)
            .expect("validated at load time")
    }
}
