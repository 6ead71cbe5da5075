use std::path::{Path, PathBuf};

use biasprobe::counterfactual::{builtin_templates, load_templates, LexiconPack};
use biasprobe::metrics::{CompositeWeights, PerturbationMode, DEFAULT_DELTA, DEFAULT_MARGIN};
use biasprobe::model::{Backend, BundleBackend, ReferenceModel, ReferenceModelConfig};
use biasprobe::stereoset::{
    builtin_neutral_prefixes, load_stereoset, parse_stereoset, DetectConfig, LoadedDataset, DEFAULT_BINS,
    DEFAULT_CONTINUATION, MINI_FIXTURE,
};
use biasprobe::PromptTemplate;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LAMBDA: f64 = 0.5;
const BUILTIN: &str = "builtin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Reference,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Zero,
    Scale,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

fn parse_weights(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights, got {s:?}"));
    }
    let mut w = [0.0; 3];
    for (slot, p) in w.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("{p:?} is not a number"))?;
    }
    Ok(w)
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Model backend.
    #[arg(long, value_enum, default_value_t = BackendKind::Reference)]
    pub backend: BackendKind,

    /// Tensor bundle for the file backend.
    #[arg(long)]
    pub bundle: Option<PathBuf>,

    /// Seed for the reference model and the category prototypes.
    #[arg(long, env = "BIASPROBE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Embedding-distance threshold for the bias flag.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,

    /// Hinge margin of the contrastive bias loss.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,

    #[arg(long, value_enum, default_value_t = ModeKind::Zero)]
    pub perturb_mode: ModeKind,

    /// Attention multiplier for `--perturb-mode scale`.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,

    /// Composite weights: embedding,probability,attention.
    #[arg(long, value_parser = parse_weights, default_value = "0.4,0.4,0.2")]
    pub weights: [f64; 3],

    /// Number of alignment-curve bins.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Templates JSON; the bundled set when absent.
    #[arg(long)]
    pub templates: Option<PathBuf>,

    /// Lexicon pack JSON; the bundled pack when absent.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,

    /// StereoSet file (published schema or canonical JSONL); the bundled
    /// 20-instance fixture when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Output path; stdout when absent (gen-fixture: output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Continuation scored for the probability signal; empty disables it in
    /// `probe`.
    #[arg(long, default_value = DEFAULT_CONTINUATION)]
    pub continuation: String,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub args: CommonArgs,
    pub weights: CompositeWeights,
    pub mode: PerturbationMode,
}

impl RunConfig {
    pub fn from_args(args: &CommonArgs) -> CliResult<Self> {
        if args.backend == BackendKind::File && args.bundle.is_none() {
            return Err(CliError::config("--bundle is required with --backend file"));
        }
        if !(args.delta > 0.0 && args.delta.is_finite()) {
            return Err(CliError::config(format!("--delta must be > 0, got {}", args.delta)));
        }
        if !(args.margin > 0.0 && args.margin.is_finite()) {
            return Err(CliError::config(format!("--margin must be > 0, got {}", args.margin)));
        }
        if args.bins < 2 {
            return Err(CliError::config(format!(
                "--bins must be at least 2, got {}",
                args.bins
            )));
        }
        let [e, p, a] = args.weights;
        let weights = CompositeWeights::new(e, p, a).map_err(|err| CliError::config(format!("--weights: {err}")))?;
        let mode = match args.perturb_mode {
            ModeKind::Zero => PerturbationMode::Zero,
            ModeKind::Uniform => PerturbationMode::Uniform,
            ModeKind::Scale => PerturbationMode::Scale { lambda: args.lambda },
        };
        mode.validate()
            .map_err(|err| CliError::config(format!("--lambda: {err}")))?;
        if weights.prob > 0.0 && args.continuation.trim().is_empty() {
            return Err(CliError::config(
                "--continuation must be non-empty when the probability weight is > 0",
            ));
        }
        Ok(RunConfig {
            args: args.clone(),
            weights,
            mode,
        })
    }

    pub fn backend(&self) -> CliResult<Box<dyn Backend>> {
        match self.args.backend {
            BackendKind::Reference => Ok(Box::new(ReferenceModel::build(ReferenceModelConfig::with_seed(
                self.args.seed,
            ))?)),
            BackendKind::File => {
                let path = self.args.bundle.as_deref().expect("validated");
                let b = BundleBackend::load(path).map_err(|e| e.context(format!("--bundle {}", path.display())))?;
                Ok(Box::new(b))
            }
        }
    }

    /// Fails with a capability error before any work when the composite
    /// weights need something the backend cannot provide.
    pub fn check_capabilities(&self, backend: &dyn Backend) -> CliResult<()> {
        let caps = backend.capabilities();
        if self.weights.attn > 0.0 && !caps.has_override {
            return Err(CliError::from(biasprobe::Error::Unsupported("attention override"))
                .with_hint("set the attention weight to 0 with --weights"));
        }
        if self.weights.prob > 0.0 && !caps.has_logprobs {
            return Err(
                CliError::from(biasprobe::Error::Unsupported("continuation log-probabilities"))
                    .with_hint("set the probability weight to 0 with --weights"),
            );
        }
        Ok(())
    }

    pub fn templates(&self) -> CliResult<Vec<PromptTemplate>> {
        match &self.args.templates {
            None => Ok(builtin_templates()),
            Some(p) => Ok(load_templates(p).map_err(|e| e.context(format!("--templates {}", p.display())))?),
        }
    }

    pub fn lexicon(&self) -> CliResult<LexiconPack> {
        match &self.args.lexicons {
            None => Ok(LexiconPack::builtin()),
            Some(p) => Ok(LexiconPack::load(p).map_err(|e| e.context(format!("--lexicons {}", p.display())))?),
        }
    }

    pub fn dataset(&self) -> CliResult<LoadedDataset> {
        match &self.args.dataset {
            None => Ok(parse_stereoset(MINI_FIXTURE)?),
            Some(p) => Ok(load_stereoset(p).map_err(|e| e.context(format!("--dataset {}", p.display())))?),
        }
    }

    pub fn detect_config(&self) -> CliResult<DetectConfig> {
        Ok(DetectConfig {
            weights: self.weights,
            mode: self.mode,
            continuation: self.args.continuation.clone(),
            lexicon: self.lexicon()?,
            delta: self.args.delta,
            bins: self.args.bins,
            neutral_prefixes: builtin_neutral_prefixes(),
        })
    }

    pub fn provenance(&self, command: &'static str) -> Provenance {
        let a = &self.args;
        let path = |p: &Option<PathBuf>| p.as_deref().map_or_else(|| BUILTIN.to_string(), display);
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: a.seed,
            config: ConfigEcho {
                backend: a.backend,
                bundle: a.bundle.as_deref().map(display),
                delta: a.delta,
                margin: a.margin,
                perturbation: self.mode,
                weights: self.weights,
                bins: a.bins,
                format: a.format,
                templates: path(&a.templates),
                lexicons: path(&a.lexicons),
                dataset: path(&a.dataset),
                continuation: a.continuation.clone(),
            },
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Identifies the tool and echoes every setting that influenced a report.
/// The output path is left out so reports written to different files stay
/// byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: ConfigEcho,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<String>,
    pub delta: f64,
    pub margin: f64,
    pub perturbation: PerturbationMode,
    pub weights: CompositeWeights,
    pub bins: usize,
    pub format: Format,
    pub templates: String,
    pub lexicons: String,
    pub dataset: String,
    pub continuation: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        args: CommonArgs,
    }

    fn parse(flags: &[&str]) -> CommonArgs {
        Wrap::try_parse_from(std::iter::once("x").chain(flags.iter().copied()))
            .unwrap()
            .args
    }

    #[test]
    fn defaults_validate() {
        let c = RunConfig::from_args(&parse(&[])).unwrap();
        assert_eq!(c.weights, CompositeWeights::default());
        assert_eq!(c.mode, PerturbationMode::Zero);
        assert_eq!(c.args.delta, DEFAULT_DELTA);
        assert_eq!(c.args.margin, DEFAULT_MARGIN);
    }

    #[test]
    fn weights_parse() {
        assert_eq!(parse_weights("1, 0,0").unwrap(), [1.0, 0.0, 0.0]);
        assert!(parse_weights("1,0").is_err());
        assert!(parse_weights("a,b,c").is_err());
        let e = RunConfig::from_args(&parse(&["--weights", "0.5,0.5,0.5"])).unwrap_err();
        assert_eq!(e.code(), 2);
        assert!(e.message.contains("--weights"));
    }

    #[test]
    fn invalid_flags_are_config_errors() {
        for (flags, field) in [
            (&["--bins", "1"][..], "--bins"),
            (&["--delta", "0"], "--delta"),
            (&["--margin=-1"], "--margin"),
            (&["--backend", "file"], "--bundle"),
            (&["--perturb-mode", "scale", "--lambda=-2"], "--lambda"),
            (&["--continuation", " "], "--continuation"),
        ] {
            let e = RunConfig::from_args(&parse(flags)).unwrap_err();
            assert_eq!(e.code(), 2, "{flags:?}");
            assert!(e.message.contains(field), "{}: {flags:?}", e.message);
        }
    }

    #[test]
    fn scale_mode_carries_lambda() {
        let c = RunConfig::from_args(&parse(&["--perturb-mode", "scale", "--lambda", "0.25"])).unwrap();
        assert_eq!(c.mode, PerturbationMode::Scale { lambda: 0.25 });
    }
}
