use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use biasprobe::counterfactual::nested_controls;
use biasprobe::metrics::{composite_signals, CompositeWeights, PerturbationMode};
use biasprobe::model::{
    tokenize, write_bundle, Backend, BackendCapabilities, BundleHeader, BundleItem, ReferenceModel,
    ReferenceModelConfig, TOKENIZER_NAME,
};
use biasprobe::stereoset::{evaluate, parse_stereoset, MINI_FIXTURE};
use biasprobe::{AttentionTensor, ContinuationScore, EmbeddingVector, Text};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const FIXTURE_FILE: &str = "stereoset_mini.json";
pub const BUNDLE_FILE: &str = "bundle.jsonl";

/// Weights used while recording: both file-backed signals on, attention
/// off since bundles cannot answer overrides.
const RECORD_WEIGHTS: CompositeWeights = CompositeWeights {
    embed: 0.5,
    prob: 0.5,
    attn: 0.0,
};

/// Delegates to the reference model and remembers every raw text whose
/// embedding or log-probabilities were requested. A continuation request
/// records the joined `"{prompt} {continuation}"` text, which is what the
/// file backend looks up.
struct Recorder<'a> {
    model: &'a ReferenceModel,
    texts: Mutex<BTreeSet<String>>,
}

impl Recorder<'_> {
    fn note(&self, raw: String) {
        self.texts.lock().expect("recorder lock").insert(raw);
    }
}

impl Backend for Recorder<'_> {
    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            has_override: false,
            ..self.model.capabilities()
        }
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn embed(&self, text: &Text) -> biasprobe::Result<EmbeddingVector> {
        let v = self.model.embed(text)?;
        self.note(text.raw().to_string());
        Ok(v)
    }

    fn continuation_probability(&self, prompt: &Text, continuation: &Text) -> biasprobe::Result<ContinuationScore> {
        let s = self.model.continuation_probability(prompt, continuation)?;
        self.note(format!("{} {}", prompt.raw(), continuation.raw()));
        Ok(s)
    }

    fn attentions(&self, text: &Text) -> biasprobe::Result<AttentionTensor> {
        self.model.attentions(text)
    }
}

/// Raw texts needed to run `probe` and `evaluate` on the bundled fixture
/// against a file backend with the attention weight at 0.
pub fn required_texts(config: &RunConfig, model: &ReferenceModel) -> CliResult<BTreeSet<String>> {
    let rec = Recorder {
        model,
        texts: Mutex::new(BTreeSet::new()),
    };
    let continuation =
        tokenize(&config.args.continuation).map_err(|e| CliError::config(format!("--continuation: {e}")))?;
    for group in nested_controls(&config.templates()?, &config.lexicon()?)? {
        composite_signals(&group, &rec, &continuation, &RECORD_WEIGHTS, PerturbationMode::Zero)?;
    }
    let mut detect = config.detect_config()?;
    detect.weights = RECORD_WEIGHTS;
    evaluate(&parse_stereoset(MINI_FIXTURE)?, &rec, &detect)?;
    Ok(rec.texts.into_inner().expect("recorder lock"))
}

/// One bundle item per text, ids `t001`, `t002`, ... in sorted text order.
pub fn bundle_items(
    model: &ReferenceModel,
    texts: &BTreeSet<String>,
    with_attention: bool,
) -> CliResult<Vec<BundleItem>> {
    let width = texts.len().to_string().len().max(3);
    texts
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let text = tokenize(raw)?;
            let mut item = BundleItem::new(format!("t{:0width$}", i + 1), &text, &model.embed(&text)?);
            item.token_logprobs = Some(model.sequence_logprobs(&text)?);
            if with_attention {
                item.attention = Some(model.attentions(&text)?.to_nested());
            }
            Ok(item)
        })
        .collect()
}

pub fn run(config: &RunConfig, with_attention: bool) -> CliResult<()> {
    let dir: PathBuf = config
        .args
        .out
        .clone()
        .ok_or_else(|| CliError::config("--out is required for gen-fixture (output directory)"))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("cannot create --out {}: {e}", dir.display())))?;

    let model = ReferenceModel::build(ReferenceModelConfig::with_seed(config.args.seed))?;
    let texts = required_texts(config, &model)?;
    let items = bundle_items(&model, &texts, with_attention)?;
    let header = BundleHeader::new(
        model.dim(),
        TOKENIZER_NAME,
        format!("reference-seed-{}", config.args.seed),
    );

    write_file(&dir.join(FIXTURE_FILE), MINI_FIXTURE.as_bytes())?;
    let bundle = dir.join(BUNDLE_FILE);
    write_bundle(&bundle, &header, &items)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", bundle.display())))?;
    log::info!("wrote {} bundle items to {}", items.len(), bundle.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
