//! The `gstd` command line: corpus selection, LLM reformulation, target
//! construction, scoring and the toy loss sweep.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use config::{BackendKind, LayoutChoice, OutputFormat, PipelineConfig};

#[derive(Debug, Parser)]
#[command(
    name = "gstd",
    version,
    about = "Speaker-gender debiasing toolkit for speech-translation data"
)]
pub struct Cli {
    /// JSON pipeline config; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for sampling and training (required by select, build-targets and sweep).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a corpus into the first-person subset and the neutral pool, then
    /// draw a gender-balanced sample.
    Select(SelectArgs),
    /// Rewrite each selected translation into masculine and feminine forms.
    Reformulate(ReformulateArgs),
    /// Mix reformulated and neutral data into fine-tuning targets.
    BuildTargets(BuildTargetsArgs),
    /// Score hypotheses against a MuST-SHE style TSV.
    Score(ScoreArgs),
    /// Train toy gender heads over a (neutral ratio, alpha, seed) grid.
    Sweep(SweepArgs),
    /// Print version information.
    Version,
}

#[derive(Debug, Args, Default)]
pub struct SelectArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `jsonl-v1` or `tsv-v1`.
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub lang: Option<String>,
    /// Comma-separated pronoun list replacing the default first-person set.
    #[arg(long, value_delimiter = ',')]
    pub pronouns: Option<Vec<String>>,
    /// Total balanced sample size (even).
    #[arg(long)]
    pub sample_size: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ReformulateArgs {
    /// Utterance JSONL to rewrite (default: selected.jsonl in the output directory).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub requests_per_minute: Option<f64>,
    /// `both-forms` or `per-form`.
    #[arg(long)]
    pub request_mode: Option<String>,
    #[arg(long)]
    pub mock_lexicon: Option<PathBuf>,
    #[arg(long)]
    pub validator_lexicon: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct BuildTargetsArgs {
    #[arg(long)]
    pub selected: Option<PathBuf>,
    #[arg(long)]
    pub neutral: Option<PathBuf>,
    #[arg(long)]
    pub reformulations: Option<PathBuf>,
    #[arg(long)]
    pub theta_neut: Option<f64>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutChoice>,
    /// `round_robin` or `masc_only`.
    #[arg(long)]
    pub neutral_modes: Option<String>,
    /// Also write `<SOS>\t<text>` training text next to each target file.
    #[arg(long)]
    pub emit_training_text: bool,
}

#[derive(Debug, Args, Default)]
pub struct ScoreArgs {
    /// `id<TAB>hypothesis` lines.
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    #[arg(long)]
    pub mustshe: Option<PathBuf>,
    /// `dev`, `test` or `all`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub lowercase: bool,
    /// Add-one smoothing of the BLEU n-gram precisions.
    #[arg(long)]
    pub smooth: bool,
    /// Row label in the table output.
    #[arg(long, default_value = "system")]
    pub system: String,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub steps: Option<usize>,
}

/// What a command reports back. `hard_failure` makes the process exit non-zero
/// after all outputs are written.
#[derive(Debug)]
pub struct Outcome {
    pub summary: serde_json::Value,
    pub table: String,
    pub hard_failure: bool,
}

impl Outcome {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => {
                serde_json::to_string_pretty(&self.summary).expect("summary serializes")
            }
            OutputFormat::Table => self.table.trim_end().to_owned(),
        }
    }
}

/// Parse a kebab- or snake-case enum name through its serde representation.
pub(crate) fn parse_enum<T: DeserializeOwned>(value: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_owned()))
        .map_err(|_| anyhow::anyhow!("unknown {what} '{value}'"))
}

/// Apply the global flags to the loaded config.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(format) = cli.format {
        cfg.format = format;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(Outcome, OutputFormat)> {
    let cfg = resolve_config(cli)?;
    let format = cfg.format;
    let outcome = match &cli.command {
        Command::Select(args) => commands::select(cfg, args)?,
        Command::Reformulate(args) => commands::reformulate(cfg, args)?,
        Command::BuildTargets(args) => commands::build_targets(cfg, args)?,
        Command::Score(args) => commands::score(cfg, args)?,
        Command::Sweep(args) => commands::sweep(cfg, args)?,
        Command::Version => commands::version(),
    };
    Ok((outcome, format))
}
