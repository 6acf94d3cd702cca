//! Pipeline configuration: a JSON file whose fields can each be overridden
//! from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gstd_core::corpus::Lang;
use gstd_core::genderloss::HarnessConfig;
use gstd_core::metrics::SplitFilter;
use gstd_core::reformulate::RequestMode;
use gstd_core::selection::MixConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    #[default]
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutChoice {
    OneMode,
    ThreeMode,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub theta_values: Vec<f64>,
    pub alpha_values: Vec<f64>,
    /// Explicit seeds; otherwise `runs_per_cell` consecutive seeds starting
    /// at the run seed.
    pub seeds: Option<Vec<u64>>,
    pub runs_per_cell: u64,
    pub harness: HarnessConfig,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            theta_values: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            alpha_values: vec![0.0, 0.1],
            seeds: None,
            runs_per_cell: 5,
            harness: HarnessConfig::default(),
        }
    }
}

/// Everything a pipeline run needs. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub format: OutputFormat,

    // select
    pub corpus: Option<PathBuf>,
    pub corpus_schema: String,
    /// Keep only utterances in this language.
    pub lang: Option<Lang>,
    pub pronouns: Option<Vec<String>>,
    /// Balanced sample size; omitted means the largest balanced sample.
    pub sample_size: Option<usize>,

    // reformulate
    /// Utterances to reformulate; defaults to `<out_dir>/selected.jsonl`.
    pub selected: Option<PathBuf>,
    pub backend: BackendKind,
    /// `zero-shot`, `few-shot[:k]` or `few-shot-cot[:k]`.
    pub strategy: String,
    /// Exemplar JSON file; the built-in set for the language otherwise.
    pub exemplars: Option<PathBuf>,
    pub batch_size: usize,
    pub retries: usize,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<f64>,
    pub request_mode: RequestMode,
    /// `masculine<TAB>feminine` word list used by the mock backend.
    pub mock_lexicon: Option<PathBuf>,
    /// Word list of edits the validator accepts.
    pub validator_lexicon: Option<PathBuf>,

    // build-targets
    /// Defaults to `<out_dir>/neutral.jsonl`.
    pub neutral: Option<PathBuf>,
    /// Defaults to `<out_dir>/reformulations.jsonl`.
    pub reformulations: Option<PathBuf>,
    pub mix: MixConfig,
    pub layout: LayoutChoice,
    pub emit_training_text: bool,

    // score
    pub hypotheses: Option<PathBuf>,
    pub mustshe: Option<PathBuf>,
    pub split: SplitFilter,
    pub bleu_lowercase: bool,
    pub bleu_smoothing: bool,

    pub sweep: SweepSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("gstd-out"),
            seed: None,
            format: OutputFormat::Table,
            corpus: None,
            corpus_schema: "jsonl-v1".into(),
            lang: None,
            pronouns: None,
            sample_size: None,
            selected: None,
            backend: BackendKind::Mock,
            strategy: "few-shot-cot:10".into(),
            exemplars: None,
            batch_size: 20,
            retries: 2,
            max_in_flight: 4,
            requests_per_minute: None,
            request_mode: RequestMode::BothForms,
            mock_lexicon: None,
            validator_lexicon: None,
            neutral: None,
            reformulations: None,
            mix: MixConfig::default(),
            layout: LayoutChoice::Both,
            emit_training_text: false,
            hypotheses: None,
            mustshe: None,
            split: SplitFilter::Test,
            bleu_lowercase: false,
            bleu_smoothing: false,
            sweep: SweepSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed.with_context(|| {
            format!("`{command}` needs a seed: pass --seed or set \"seed\" in the config")
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn input_or_default(&self, value: &Option<PathBuf>, default_name: &str) -> PathBuf {
        value.clone().unwrap_or_else(|| self.out_path(default_name))
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} '{}' does not exist", path.display());
    }
    Ok(())
}
