//! Run settings merged from an optional TOML file and command-line flags.
//! Flags win over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use stereobias::inter::{InterMode, DEFAULT_JOINER};
use stereobias::intra::MaskStyle;
use stereobias::pipeline::PipelineConfig;
use stereobias::provider::client::Endpoint;
use stereobias::provider::{ModelKind, MockProvider};

use crate::exit::{CliResult, Failure, Status, WithStatus};

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub language: Option<String>,
    pub provider: Option<String>,
    pub model_kind: Option<String>,
    pub inter_mode: Option<String>,
    pub intra_mlm_trailing_masks: Option<bool>,
    pub joiner: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Status::Io, e).context(format!("cannot read config {}", path.display())))?;
        toml::from_str(&text).status(Status::Config).map_err(|f| f.context(format!("invalid config {}", path.display())))
    }
}

/// Where the backend comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Remote(Endpoint),
    /// In-process mock, by flavour name.
    Mock(String),
}

impl ProviderSpec {
    pub fn parse(s: &str) -> CliResult<Self> {
        if s == "mock" {
            return Ok(ProviderSpec::Mock("full".into()));
        }
        if let Some(kind) = s.strip_prefix("mock:") {
            if MockProvider::from_name(kind, 0).is_none() {
                return Err(Failure::config(format!(
                    "unknown mock kind `{kind}` (expected one of {})",
                    MockProvider::NAMES.join(", ")
                )));
            }
            return Ok(ProviderSpec::Mock(kind.into()));
        }
        s.parse::<Endpoint>().map(ProviderSpec::Remote).map_err(Failure::config)
    }

    /// Human-readable description used in report fingerprints.
    pub fn describe(&self) -> String {
        match self {
            ProviderSpec::Remote(Endpoint::Tcp(a)) => format!("tcp://{a}"),
            ProviderSpec::Remote(Endpoint::Exec(c)) => format!("exec:{c}"),
            ProviderSpec::Mock(k) => format!("mock:{k}"),
        }
    }
}

/// Fully resolved settings for `predict` and `run`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub language: String,
    pub provider: ProviderSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

/// Flag values that may also come from the config file.
#[derive(Debug, Default, Clone)]
pub struct RunFlags {
    pub dataset: Option<PathBuf>,
    pub language: Option<String>,
    pub provider: Option<String>,
    pub model_kind: Option<String>,
    pub inter_mode: Option<String>,
    pub trailing_masks: bool,
    pub joiner: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn resolve(flags: RunFlags, file: FileConfig) -> CliResult<Self> {
        let dataset = flags.dataset.or(file.dataset).ok_or_else(|| Failure::config("no dataset given"))?;
        let provider = flags.provider.or(file.provider).ok_or_else(|| Failure::config("no provider given"))?;
        let output_dir = flags.output_dir.or(file.output_dir).ok_or_else(|| Failure::config("no output directory given"))?;
        let workers = flags.workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            return Err(Failure::config("worker count must be at least 1"));
        }
        let model_kind = flags
            .model_kind
            .or(file.model_kind)
            .map(|k| k.parse::<ModelKind>().map_err(Failure::config))
            .transpose()?;
        let inter_mode = flags
            .inter_mode
            .or(file.inter_mode)
            .map(|m| m.parse::<InterMode>().map_err(Failure::config))
            .transpose()?;
        let trailing = flags.trailing_masks || file.intra_mlm_trailing_masks.unwrap_or(false);
        Ok(RunConfig {
            dataset,
            language: flags.language.or(file.language).unwrap_or_else(|| "en".into()),
            provider: ProviderSpec::parse(&provider)?,
            output_dir,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            pipeline: PipelineConfig {
                model_kind,
                inter_mode,
                mask_style: if trailing { MaskStyle::TrailingMasks } else { MaskStyle::Truncate },
                joiner: flags.joiner.or(file.joiner).unwrap_or_else(|| DEFAULT_JOINER.into()),
                workers,
            },
        })
    }
}
